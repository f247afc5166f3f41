#pragma once

#include "coordatt/attention.hpp"

namespace coordatt {

// Straight-line per-sample transcriptions of the three attention maps. These
// read the parameter tensors directly and share no kernels with the fast
// path; they exist solely so the two implementations can disagree.
Tensor oracle_forward_se(const Tensor& x, const SEParams& p);
Tensor oracle_forward_cbam(const Tensor& x, const CBAMParams& p);
Tensor oracle_forward_ca(const Tensor& x, const CAParams& p, const AttentionConfig& cfg);

Tensor oracle_forward(const Tensor& x, const AttentionParams& p);

} // namespace coordatt
