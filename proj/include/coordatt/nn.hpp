#pragma once

#include "coordatt/autograd.hpp"

#include <optional>
#include <utility>

namespace coordatt {

enum class Act { none, relu, relu6, hard_swish, sigmoid };
enum class Mode { train, eval };

struct ConvParams {
    Tensor weight;                 // [Cout, Cin/groups, kH, kW]
    std::optional<Tensor> bias;    // [Cout]
    int stride = 1;
    int padding = 0;
    int groups = 1;
};

struct BatchNormParams {
    Tensor gamma, beta;                    // learnable, [C]
    Tensor running_mean, running_var;      // state, [C]
    double eps = 1e-5;
    double momentum = 0.1;
};

struct LinearParams {
    Tensor weight;   // [Cout, Cin]
    Tensor bias;     // [Cout]
};

// Deterministic initializers: Kaiming-uniform fan-in for weights
// (bound sqrt(6/fan_in)), zero biases, BN gamma=1 beta=0.
ConvParams conv_init(Rng& rng, int cout, int cin, int k,
                     int stride, int padding, int groups, bool bias);
BatchNormParams batchnorm_init(int c);
LinearParams linear_init(Rng& rng, int cout, int cin);

// Parameters bound onto a tape for one evaluation.
struct ConvVars {
    NodeId weight = -1, bias = -1;
    int stride = 1, padding = 0, groups = 1;
};
struct BatchNormVars {
    NodeId gamma = -1, beta = -1;
    BatchNormParams* p = nullptr;
};
struct LinearVars {
    NodeId weight = -1, bias = -1;
};

ConvVars bind(Tape& t, ConvParams& p);
BatchNormVars bind(Tape& t, BatchNormParams& p);
LinearVars bind(Tape& t, LinearParams& p);

// Differentiable ops. All record onto the tape; backward is exact.
NodeId conv2d(Tape& t, NodeId x, const ConvVars& p);
// Train mode normalizes with batch statistics over (N,H,W) and updates the
// running stats in *vars.p; eval mode reads the running stats only.
NodeId batchnorm(Tape& t, NodeId x, const BatchNormVars& vars, Mode mode);
NodeId linear(Tape& t, NodeId x, const LinearVars& p);

NodeId global_avg_pool(Tape& t, NodeId x);       // [N,C,H,W] -> [N,C,1,1]
NodeId pool_x(Tape& t, NodeId x);                // [N,C,H,W] -> [N,C,H,1], per-row mean
NodeId pool_y(Tape& t, NodeId x);                // [N,C,H,W] -> [N,C,1,W], per-column mean
NodeId global_max_pool(Tape& t, NodeId x);       // ties route to first index, row-major
NodeId channel_pool_mean_max(Tape& t, NodeId x); // [N,C,H,W] -> [N,2,H,W]

NodeId sigmoid(Tape& t, NodeId x);
NodeId relu(Tape& t, NodeId x);
NodeId relu6(Tape& t, NodeId x);
NodeId hard_swish(Tape& t, NodeId x);            // x * clamp(x+3,0,6) / 6
NodeId activation(Tape& t, NodeId x, Act act);

NodeId add(Tape& t, NodeId a, NodeId b);         // same shape
// g has rank 4 with every extent equal to x's or 1; gradient sums over the
// broadcast axes.
NodeId mul_broadcast(Tape& t, NodeId x, NodeId g);
// Fused y = x * gh * gw (single multiply; see tensor.hpp for the kernel).
NodeId broadcast_mul(Tape& t, NodeId x, NodeId gh, NodeId gw);
NodeId concat_spatial(Tape& t, NodeId a, NodeId b);
std::pair<NodeId, NodeId> split_spatial(Tape& t, NodeId f, int h);
NodeId reshape(Tape& t, NodeId x, std::vector<int> shape);
NodeId sum(Tape& t, NodeId x);                   // -> [1]
// Mean cross-entropy over the batch; logits [N,K], labels in [0,K).
NodeId softmax_cross_entropy(Tape& t, NodeId logits, const std::vector<int>& labels);

// Raw forward wrappers over the same kernels (throwaway tape, no grad).
Tensor conv2d(const Tensor& x, const ConvParams& p);
Tensor batchnorm(const Tensor& x, BatchNormParams& p, Mode mode);
Tensor linear(const Tensor& x, const LinearParams& p);
Tensor global_avg_pool(const Tensor& x);
Tensor pool_x(const Tensor& x);
Tensor pool_y(const Tensor& x);
Tensor global_max_pool(const Tensor& x);
Tensor channel_pool_mean_max(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor relu6(const Tensor& x);
Tensor hard_swish(const Tensor& x);

// Numerically stable row-wise softmax on [N,K]; inference helper.
Tensor softmax_rows(const Tensor& logits);

// Output spatial extent of a convolution: floor((in + 2*pad - k)/stride) + 1.
int conv_out_extent(int in, int k, int stride, int padding);

} // namespace coordatt
