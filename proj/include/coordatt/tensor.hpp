#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace coordatt {

// Dense row-major tensor, rank 1..4. Rank-4 layout is NCHW.
// Values are immutable by convention once a forward pass has produced them;
// grad is absent until a backward pass deposits it.
struct Tensor {
    std::vector<int> shape;
    std::vector<double> data;
    std::optional<std::vector<double>> grad;

    Tensor() = default;
    Tensor(std::vector<int> shape_, double fill = 0.0);
    Tensor(std::vector<int> shape_, std::vector<double> data_);

    int rank() const { return static_cast<int>(shape.size()); }
    std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
    int extent(int axis) const;

    // rank-4 accessors; checked extents are the caller's responsibility
    double& at(int n, int c, int h, int w);
    double at(int n, int c, int h, int w) const;
    // rank-2 accessors
    double& at(int i, int j);
    double at(int i, int j) const;

    bool same_shape(const Tensor& other) const { return shape == other.shape; }
    bool all_finite() const;

    static Tensor zeros(std::vector<int> shape);
    static Tensor full(std::vector<int> shape, double v);
};

std::string shape_to_string(const std::vector<int>& shape);
std::int64_t shape_numel(const std::vector<int>& shape);

// splitmix64: tiny, seedable, bit-identical across platforms.
struct Rng {
    std::uint64_t state;

    explicit Rng(std::uint64_t seed) : state(seed) {}

    std::uint64_t next_u64();
    // uniform in [0,1), 53-bit mantissa
    double uniform();
    double uniform(double lo, double hi);
    // inclusive bounds
    int uniform_int(int lo, int hi);
    Tensor uniform_tensor(std::vector<int> shape, double lo, double hi);
};

// Structural ops used by coordinate attention. All are pure functions; the
// differentiable versions live in nn.hpp and share these kernels.

// a: [N,C,H,1], b: [N,C,1,W] -> [N,C,1,H+W]; a is transposed to [N,C,1,H]
// and occupies the first H positions of the joint axis.
Tensor concat_spatial(const Tensor& a, const Tensor& b);

// Inverse of concat_spatial: f: [N,C',1,H+W] with h=H -> ([N,C',H,1], [N,C',1,W]).
std::pair<Tensor, Tensor> split_spatial(const Tensor& f, int h);

// y[n,c,i,j] = x[n,c,i,j] * gh[n,c,i,0] * gw[n,c,0,j], one fused multiply.
Tensor broadcast_mul(const Tensor& x, const Tensor& gh, const Tensor& gw);

} // namespace coordatt
