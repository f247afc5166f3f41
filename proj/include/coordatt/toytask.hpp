#pragma once

#include "coordatt/blocks.hpp"

namespace coordatt {

struct ToyBatch {
    Tensor images;             // [n,1,16,16]
    std::vector<int> labels;   // bar coordinate / 2, 8 classes
};

// Synthetic positional task: one bright horizontal or vertical bar on a dim
// noisy background; the class is the quantized bar coordinate, so the network
// has to locate the bar along whichever axis it lies on.
ToyBatch make_toy_batch(Rng& rng, int n);

// Miniature 3-block inverted-residual network, 16x16 single-channel input,
// 8 classes.
NetworkSpec toy_network_spec(const AttentionConfig& attention);

struct ToyStep {
    int step = 0;
    double loss = 0.0;
    double accuracy = 0.0;
};

struct ToyTrainResult {
    std::vector<ToyStep> log;
    double initial_loss = 0.0;
    double min_loss = 0.0;
    double final_loss = 0.0;
};

// SGD with momentum 0.9 on fresh seeded batches; deterministic for a given
// seed. out_net, when given, receives the trained network.
ToyTrainResult train_toy(const AttentionConfig& attention, int steps, std::uint64_t seed,
                         Network* out_net = nullptr);

// "step,loss,accuracy" header plus one row per step.
std::string metrics_csv(const ToyTrainResult& result);

} // namespace coordatt
