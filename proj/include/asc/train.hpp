#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "asc/data.hpp"
#include "asc/nn.hpp"

namespace asc {

struct TrainConfig {
    double initial_lr = 0.001;
    double plateau_factor = 0.5;
    int plateau_patience = 20;
    int early_stop_patience = 50;
    int max_epochs = 500;
    int batch_size = 32;
    uint64_t seed = 42;
    double focal_alpha = 0.25;
    double focal_gamma = 2.0;
    double improvement_eps = 1e-9;
    // optional early exit: stop once train and val accuracy both reach the
    // targets (negative disables)
    double target_train_acc = -1.0;
    double target_val_acc = -1.0;

    void validate() const;
};

struct EpochRecord {
    int epoch;
    double lr;
    double train_loss;
    double train_acc;
    double val_acc;
};

struct TrainState {
    int epoch = 0;
    double current_lr = 0.0;
    double best_val_acc = -1.0;
    int epochs_since_improvement = 0;
    int plateau_counter = 0;
    std::vector<EpochRecord> history;
};

struct SchedulerDecision {
    double lr = 0.0;
    bool stop = false;
    bool improved = false;
};

// Plateau scheduler plus early stopping. An improvement (beyond the epsilon
// tie-break) resets both counters; a plateau_patience-long plateau halves the
// learning rate and restarts the plateau counter; early_stop_patience epochs
// without improvement, or reaching max_epochs, stops the run.
SchedulerDecision scheduler_step(TrainState& state, const TrainConfig& cfg, double val_acc);

struct GroupStat {
    int correct = 0;
    int total = 0;
    double accuracy() const { return total == 0 ? 0.0 : static_cast<double>(correct) / total; }
};

struct EvalMetrics {
    int total = 0;
    int correct = 0;
    double accuracy = 0.0;
    double mean_focal_loss = 0.0;
    std::map<std::string, GroupStat> per_class;
    std::map<std::string, GroupStat> per_device;
};

EvalMetrics evaluate(Model& model, const std::vector<Example>& examples, const TrainConfig& cfg);

// argmax class ids for a set of examples, inference mode
std::vector<int> predict_ids(Model& model, const std::vector<Example>& examples, int batch_size);

struct TrainResult {
    TrainState state;
    std::optional<Model> best_model;
    double best_val_acc = 0.0;
    int best_epoch = 0;
};

// Full training loop: seeded shuffle, minibatch forward/backward/Adam, one
// validation pass per epoch, plateau scheduling; returns the weights snapshot
// from the best-validation epoch.
TrainResult train_model(Model& model, const std::vector<Example>& train_set,
                        const std::vector<Example>& val_set, const TrainConfig& cfg);

std::string history_csv(const std::vector<EpochRecord>& history);

// Stacks examples [first, first+count) into a B x bands x frames x 1 tensor.
Tensor batch_tensor(const std::vector<Example>& examples, const std::vector<int>& order,
                    size_t first, size_t count);

}  // namespace asc
