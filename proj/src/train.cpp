#include "asc/train.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>

namespace asc {

void TrainConfig::validate() const {
    if (!(initial_lr > 0.0)) throw ConfigError("initial_lr must be positive");
    if (!(plateau_factor > 0.0 && plateau_factor < 1.0))
        throw ConfigError("plateau_factor must be in (0, 1)");
    if (plateau_patience <= 0 || early_stop_patience <= 0)
        throw ConfigError("patience values must be positive");
    if (plateau_patience >= early_stop_patience)
        throw ConfigError("plateau_patience must be below early_stop_patience");
    if (max_epochs < 1) throw ConfigError("max_epochs must be at least 1");
    if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
}

SchedulerDecision scheduler_step(TrainState& state, const TrainConfig& cfg, double val_acc) {
    if (!(state.current_lr > 0.0))
        throw StateError("scheduler_step: state not initialized (current_lr must be positive)");
    SchedulerDecision dec;
    if (val_acc > state.best_val_acc + cfg.improvement_eps) {
        state.best_val_acc = val_acc;
        state.epochs_since_improvement = 0;
        state.plateau_counter = 0;
        dec.improved = true;
    } else {
        ++state.epochs_since_improvement;
        ++state.plateau_counter;
        if (state.plateau_counter >= cfg.plateau_patience) {
            state.current_lr *= cfg.plateau_factor;
            state.plateau_counter = 0;
        }
        if (state.epochs_since_improvement >= cfg.early_stop_patience) dec.stop = true;
    }
    if (state.epoch >= cfg.max_epochs) dec.stop = true;
    dec.lr = state.current_lr;
    return dec;
}

Tensor batch_tensor(const std::vector<Example>& examples, const std::vector<int>& order,
                    size_t first, size_t count) {
    const FeatureMatrix& f0 = examples[static_cast<size_t>(order[first])].features;
    Tensor x({static_cast<int>(count), f0.bands, f0.frames, 1});
    for (size_t i = 0; i < count; ++i) {
        const FeatureMatrix& f = examples[static_cast<size_t>(order[first + i])].features;
        if (f.bands != f0.bands || f.frames != f0.frames)
            throw InputError("batch assembly: feature shapes differ across clips (" +
                             std::to_string(f.bands) + "x" + std::to_string(f.frames) + " vs " +
                             std::to_string(f0.bands) + "x" + std::to_string(f0.frames) + ")");
        for (int b = 0; b < f.bands; ++b)
            for (int t = 0; t < f.frames; ++t)
                x.at4(static_cast<int>(i), b, t, 0) = static_cast<double>(f.at(b, t));
    }
    return x;
}

std::vector<int> predict_ids(Model& model, const std::vector<Example>& examples, int batch_size) {
    std::vector<int> order(examples.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<int> ids(examples.size(), -1);
    for (size_t first = 0; first < examples.size(); first += static_cast<size_t>(batch_size)) {
        const size_t count = std::min(static_cast<size_t>(batch_size), examples.size() - first);
        Tensor x = batch_tensor(examples, order, first, count);
        Tensor probs = model.forward(x, Mode::kInfer);
        for (size_t i = 0; i < count; ++i) {
            int best = 0;
            for (int k = 1; k < probs.dim(1); ++k)
                if (probs.at2(static_cast<int>(i), k) > probs.at2(static_cast<int>(i), best)) best = k;
            ids[first + i] = best;
        }
    }
    return ids;
}

EvalMetrics evaluate(Model& model, const std::vector<Example>& examples, const TrainConfig& cfg) {
    if (examples.empty()) throw InputError("evaluate: empty example set");
    EvalMetrics m;
    std::vector<int> order(examples.size());
    std::iota(order.begin(), order.end(), 0);
    double loss_sum = 0.0;
    for (size_t first = 0; first < examples.size(); first += static_cast<size_t>(cfg.batch_size)) {
        const size_t count = std::min(static_cast<size_t>(cfg.batch_size), examples.size() - first);
        Tensor x = batch_tensor(examples, order, first, count);
        std::vector<int> targets(count);
        for (size_t i = 0; i < count; ++i) targets[i] = examples[first + i].label_id;
        Tensor probs = model.forward(x, Mode::kInfer);
        loss_sum += focal_loss(probs, targets, cfg.focal_alpha, cfg.focal_gamma) *
                    static_cast<double>(count);
        for (size_t i = 0; i < count; ++i) {
            int best = 0;
            for (int k = 1; k < probs.dim(1); ++k)
                if (probs.at2(static_cast<int>(i), k) > probs.at2(static_cast<int>(i), best)) best = k;
            const Example& ex = examples[first + i];
            const bool ok = best == ex.label_id;
            ++m.total;
            m.correct += ok;
            auto& pc = m.per_class[ex.scene_label];
            ++pc.total;
            pc.correct += ok;
            auto& pd = m.per_device[ex.device_id];
            ++pd.total;
            pd.correct += ok;
        }
    }
    m.accuracy = static_cast<double>(m.correct) / m.total;
    m.mean_focal_loss = loss_sum / m.total;
    return m;
}

TrainResult train_model(Model& model, const std::vector<Example>& train_set,
                        const std::vector<Example>& val_set, const TrainConfig& cfg) {
    cfg.validate();
    if (train_set.empty()) throw InputError("training split is empty");
    if (val_set.empty()) throw InputError("validation split is empty");

    Rng rng(cfg.seed);
    model.init_params(rng);

    auto params = model.parameters();
    AdamState adam;

    TrainResult result;
    TrainState& st = result.state;
    st.current_lr = cfg.initial_lr;

    std::vector<int> order(train_set.size());
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 1;; ++epoch) {
        const double lr = st.current_lr;
        rng.shuffle(order);

        double loss_sum = 0.0;
        int correct = 0;
        for (size_t first = 0; first < train_set.size(); first += static_cast<size_t>(cfg.batch_size)) {
            const size_t count = std::min(static_cast<size_t>(cfg.batch_size), train_set.size() - first);
            Tensor x = batch_tensor(train_set, order, first, count);
            std::vector<int> targets(count);
            for (size_t i = 0; i < count; ++i)
                targets[i] = train_set[static_cast<size_t>(order[first + i])].label_id;

            Tensor probs = model.forward(x, Mode::kTrain, &rng);
            loss_sum += focal_loss(probs, targets, cfg.focal_alpha, cfg.focal_gamma) *
                        static_cast<double>(count);
            for (size_t i = 0; i < count; ++i) {
                int best = 0;
                for (int k = 1; k < probs.dim(1); ++k)
                    if (probs.at2(static_cast<int>(i), k) > probs.at2(static_cast<int>(i), best))
                        best = k;
                correct += best == targets[i];
            }

            model.zero_grad();
            Tensor dlogits = focal_loss_grad_logits(probs, targets, cfg.focal_alpha, cfg.focal_gamma);
            model.backward(dlogits);
            adam_step(params, adam, lr);
        }

        const double train_loss = loss_sum / static_cast<double>(train_set.size());
        const double train_acc = static_cast<double>(correct) / static_cast<double>(train_set.size());
        const double val_acc = evaluate(model, val_set, cfg).accuracy;

        st.epoch = epoch;
        SchedulerDecision dec = scheduler_step(st, cfg, val_acc);
        st.history.push_back({epoch, lr, train_loss, train_acc, val_acc});

        if (dec.improved) {
            result.best_model = model;
            result.best_val_acc = val_acc;
            result.best_epoch = epoch;
        }

        const bool targets_hit = cfg.target_train_acc >= 0.0 && train_acc >= cfg.target_train_acc &&
                                 (cfg.target_val_acc < 0.0 || val_acc >= cfg.target_val_acc);
        if (dec.stop || targets_hit) break;
    }
    return result;
}

std::string history_csv(const std::vector<EpochRecord>& history) {
    std::string out = "epoch,lr,train_loss,train_acc,val_acc\n";
    char buf[160];
    for (const auto& r : history) {
        std::snprintf(buf, sizeof(buf), "%d,%.10g,%.10g,%.10g,%.10g\n", r.epoch, r.lr, r.train_loss,
                      r.train_acc, r.val_acc);
        out += buf;
    }
    return out;
}

}  // namespace asc
