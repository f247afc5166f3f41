#pragma once

#include "coordatt/blocks.hpp"

#include <cstdint>

namespace coordatt {

struct CostRow {
    std::string layer;
    std::string kind;        // conv | conv-x2 | batchnorm | linear | pool
    std::int64_t params = 0;
    std::int64_t madds = 0;
    std::vector<int> out_shape;   // CxHxW (batch dropped, N=1 convention)
};

struct CostReport {
    std::string convention = "macs-conv-linear-n1-v1";
    std::array<int, 3> input_shape{3, 224, 224};
    std::vector<CostRow> rows;
    std::int64_t total_params = 0;
    std::int64_t total_params_no_bn = 0;
    std::int64_t total_madds = 0;
};

// Multiply-adds are MACs over convolutions and linear layers only, N=1:
// out_elements * (kH*kW*Cin/groups). BN, activations, poolings, and the
// attention elementwise multiplies are excluded. Params count learnable
// tensors only (conv w/b, BN gamma/beta, linear w/b).
CostReport cost_report(Network& net, std::array<int, 3> input_chw);

std::int64_t count_params(Network& net);
std::int64_t count_madds(Network& net, std::array<int, 3> input_chw);

enum class ReportFormat { csv, json };
std::string emit_report(const CostReport& report, ReportFormat format);

} // namespace coordatt
