#include "coordatt/toytask.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace coordatt {

ToyBatch make_toy_batch(Rng& rng, int n) {
    ToyBatch batch;
    batch.images = Tensor::zeros({n, 1, 16, 16});
    batch.labels.resize(static_cast<std::size_t>(n));
    for (int s = 0; s < n; ++s) {
        const int coord = rng.uniform_int(0, 15);
        const bool horizontal = rng.uniform() < 0.5;
        for (int i = 0; i < 16; ++i)
            for (int j = 0; j < 16; ++j) {
                const bool on_bar = horizontal ? (i == coord) : (j == coord);
                batch.images.at(s, 0, i, j) =
                    on_bar ? 0.8 + rng.uniform(0.0, 0.2) : rng.uniform(0.0, 0.2);
            }
        batch.labels[static_cast<std::size_t>(s)] = coord / 2;
    }
    return batch;
}

NetworkSpec toy_network_spec(const AttentionConfig& attention) {
    NetworkSpec spec;
    spec.name = "toy-positional";
    spec.input_shape = {1, 16, 16};
    spec.stem = StemSpec{8, 3, 1};
    spec.head = HeadSpec{0, 8};
    BlockSpec b1;
    b1.in_channels = 8;
    b1.out_channels = 8;
    b1.stride = 1;
    b1.expansion = 2.0;
    BlockSpec b2 = b1;
    b2.out_channels = 16;
    b2.stride = 2;
    BlockSpec b3 = b2;
    b3.in_channels = 16;
    b3.stride = 1;
    spec.blocks = {b1, b2, b3};
    AttentionConfig cfg = attention;
    cfg.reduction = 4;
    cfg.mid_channels_min = 2;
    apply_attention(spec, cfg);
    return spec;
}

ToyTrainResult train_toy(const AttentionConfig& attention, int steps, std::uint64_t seed,
                         Network* out_net) {
    constexpr int kBatch = 16;
    constexpr double kLr = 0.1;
    constexpr double kMomentum = 0.9;

    Rng init_rng(seed);
    Network net = build_network(toy_network_spec(attention), init_rng);
    std::vector<ParamEntry> params = net.parameters();
    std::vector<std::vector<double>> velocity;
    for (const ParamEntry& e : params)
        velocity.emplace_back(e.tensor->data.size(), 0.0);

    ToyTrainResult result;
    for (int step = 0; step < steps; ++step) {
        Rng data_rng(seed + 0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(step + 1));
        ToyBatch batch = make_toy_batch(data_rng, kBatch);

        net.zero_grad();
        Tape t;
        NodeId logits = net.forward(t, t.leaf(batch.images, false), Mode::train);
        NodeId loss = softmax_cross_entropy(t, logits, batch.labels);
        const double loss_v = t.val(loss).data[0];

        int correct = 0;
        const Tensor& lv = t.val(logits);
        for (int s = 0; s < kBatch; ++s) {
            int best = 0;
            for (int k = 1; k < 8; ++k)
                if (lv.at(s, k) > lv.at(s, best)) best = k;
            if (best == batch.labels[static_cast<std::size_t>(s)]) ++correct;
        }
        t.backward(loss);

        for (std::size_t p = 0; p < params.size(); ++p) {
            if (!params[p].learnable) continue;
            Tensor& w = *params[p].tensor;
            if (!w.grad) continue;
            std::vector<double>& v = velocity[p];
            for (std::size_t i = 0; i < w.data.size(); ++i) {
                v[i] = kMomentum * v[i] + (*w.grad)[i];
                w.data[i] -= kLr * v[i];
            }
        }
        result.log.push_back({step, loss_v, static_cast<double>(correct) / kBatch});
    }
    if (!result.log.empty()) {
        result.initial_loss = result.log.front().loss;
        result.final_loss = result.log.back().loss;
        result.min_loss = result.initial_loss;
        for (const ToyStep& s : result.log) result.min_loss = std::min(result.min_loss, s.loss);
    }
    if (out_net) *out_net = std::move(net);
    return result;
}

std::string metrics_csv(const ToyTrainResult& result) {
    std::ostringstream out;
    out << "step,loss,accuracy\n";
    out.precision(9);
    for (const ToyStep& s : result.log)
        out << s.step << "," << s.loss << "," << s.accuracy << "\n";
    return out.str();
}

} // namespace coordatt
