#include "coordatt/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace coordatt {

static void check_shape(const std::vector<int>& shape) {
    if (shape.empty() || shape.size() > 4)
        throw std::runtime_error("tensor: rank must be 1..4, got " + shape_to_string(shape));
    for (int e : shape)
        if (e < 1) throw std::runtime_error("tensor: extents must be >= 1, got " + shape_to_string(shape));
}

Tensor::Tensor(std::vector<int> shape_, double fill) : shape(std::move(shape_)) {
    check_shape(shape);
    data.assign(static_cast<std::size_t>(shape_numel(shape)), fill);
}

Tensor::Tensor(std::vector<int> shape_, std::vector<double> data_)
    : shape(std::move(shape_)), data(std::move(data_)) {
    check_shape(shape);
    if (shape_numel(shape) != static_cast<std::int64_t>(data.size()))
        throw std::runtime_error("tensor: data length " + std::to_string(data.size()) +
                                 " does not match shape " + shape_to_string(shape));
}

int Tensor::extent(int axis) const {
    if (axis < 0 || axis >= rank())
        throw std::runtime_error("tensor: axis " + std::to_string(axis) + " out of range for rank " +
                                 std::to_string(rank()));
    return shape[static_cast<std::size_t>(axis)];
}

double& Tensor::at(int n, int c, int h, int w) {
    const int C = shape[1], H = shape[2], W = shape[3];
    return data[static_cast<std::size_t>(((static_cast<std::int64_t>(n) * C + c) * H + h) * W + w)];
}

double Tensor::at(int n, int c, int h, int w) const {
    const int C = shape[1], H = shape[2], W = shape[3];
    return data[static_cast<std::size_t>(((static_cast<std::int64_t>(n) * C + c) * H + h) * W + w)];
}

double& Tensor::at(int i, int j) {
    return data[static_cast<std::size_t>(static_cast<std::int64_t>(i) * shape[1] + j)];
}

double Tensor::at(int i, int j) const {
    return data[static_cast<std::size_t>(static_cast<std::int64_t>(i) * shape[1] + j)];
}

bool Tensor::all_finite() const {
    for (double v : data)
        if (!std::isfinite(v)) return false;
    return true;
}

Tensor Tensor::zeros(std::vector<int> shape) { return Tensor(std::move(shape), 0.0); }

Tensor Tensor::full(std::vector<int> shape, double v) { return Tensor(std::move(shape), v); }

std::string shape_to_string(const std::vector<int>& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

std::int64_t shape_numel(const std::vector<int>& shape) {
    std::int64_t n = 1;
    for (int e : shape) n *= e;
    return n;
}

std::uint64_t Rng::next_u64() {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

double Rng::uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) { return lo + uniform() * (hi - lo); }

int Rng::uniform_int(int lo, int hi) {
    const auto span = static_cast<std::uint64_t>(hi - lo + 1);
    return lo + static_cast<int>(next_u64() % span);
}

Tensor Rng::uniform_tensor(std::vector<int> shape, double lo, double hi) {
    Tensor t(std::move(shape));
    for (double& v : t.data) v = uniform(lo, hi);
    return t;
}

Tensor concat_spatial(const Tensor& a, const Tensor& b) {
    if (a.rank() != 4 || b.rank() != 4)
        throw std::runtime_error("concat_spatial: rank-4 inputs required");
    if (a.shape[0] != b.shape[0] || a.shape[1] != b.shape[1])
        throw std::runtime_error("concat_spatial: N/C mismatch, " + shape_to_string(a.shape) +
                                 " vs " + shape_to_string(b.shape));
    if (a.shape[3] != 1 || b.shape[2] != 1)
        throw std::runtime_error("concat_spatial: expected a [N,C,H,1] and b [N,C,1,W], got " +
                                 shape_to_string(a.shape) + " and " + shape_to_string(b.shape));
    const int N = a.shape[0], C = a.shape[1], H = a.shape[2], W = b.shape[3];
    Tensor out({N, C, 1, H + W});
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            for (int i = 0; i < H; ++i) out.at(n, c, 0, i) = a.at(n, c, i, 0);
            for (int j = 0; j < W; ++j) out.at(n, c, 0, H + j) = b.at(n, c, 0, j);
        }
    return out;
}

std::pair<Tensor, Tensor> split_spatial(const Tensor& f, int h) {
    if (f.rank() != 4 || f.shape[2] != 1)
        throw std::runtime_error("split_spatial: expected [N,C,1,L], got " + shape_to_string(f.shape));
    const int L = f.shape[3];
    if (h < 1 || h >= L)
        throw std::runtime_error("split_spatial: h=" + std::to_string(h) +
                                 " out of range for joint extent " + std::to_string(L));
    const int N = f.shape[0], C = f.shape[1], W = L - h;
    Tensor fh({N, C, h, 1});
    Tensor fw({N, C, 1, W});
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            for (int i = 0; i < h; ++i) fh.at(n, c, i, 0) = f.at(n, c, 0, i);
            for (int j = 0; j < W; ++j) fw.at(n, c, 0, j) = f.at(n, c, 0, h + j);
        }
    return {std::move(fh), std::move(fw)};
}

Tensor broadcast_mul(const Tensor& x, const Tensor& gh, const Tensor& gw) {
    if (x.rank() != 4 || gh.rank() != 4 || gw.rank() != 4)
        throw std::runtime_error("broadcast_mul: rank-4 inputs required");
    const int N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
    if (gh.shape != std::vector<int>{N, C, H, 1} || gw.shape != std::vector<int>{N, C, 1, W})
        throw std::runtime_error("broadcast_mul: gate shapes " + shape_to_string(gh.shape) + "/" +
                                 shape_to_string(gw.shape) + " do not conform to x " +
                                 shape_to_string(x.shape));
    Tensor y({N, C, H, W});
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c)
            for (int i = 0; i < H; ++i) {
                const double gi = gh.at(n, c, i, 0);
                for (int j = 0; j < W; ++j)
                    y.at(n, c, i, j) = x.at(n, c, i, j) * gi * gw.at(n, c, 0, j);
            }
    return y;
}

} // namespace coordatt
