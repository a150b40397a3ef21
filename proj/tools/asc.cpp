// asc - acoustic scene classification pipeline
//
// Subcommands: synth, extract, stats, train, eval, predict, export, size.
// Exit codes: 0 success, 1 data error, 2 usage/config error.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>

#include "asc/data.hpp"
#include "asc/modelio.hpp"
#include "asc/train.hpp"

namespace fs = std::filesystem;
using namespace asc;

namespace {

DatasetIndex parse_metadata_files(const std::vector<std::string>& paths, Split split) {
    DatasetIndex merged;
    merged.classes = scene_classes();
    std::set<std::string> seen;
    for (const auto& p : paths) {
        const auto buf = read_file(p);
        DatasetIndex one;
        try {
            one = parse_metadata(std::string(buf.begin(), buf.end()), split);
        } catch (const FormatError& e) {
            throw FormatError(p + ": " + e.what());
        }
        for (auto& e : one.entries) {
            if (!seen.insert(e.path).second) continue;
            merged.entries.push_back(std::move(e));
        }
    }
    std::set<std::string> devs;
    for (const auto& e : merged.entries) devs.insert(e.device_id);
    for (const auto& d : device_vocabulary())
        if (devs.count(d)) merged.devices.push_back(d);
    return merged;
}

void add_frontend_flags(CLI::App* cmd, FrontendConfig& fe) {
    cmd->add_option("--sample-rate", fe.sample_rate, "Expected sample rate (Hz)");
    cmd->add_option("--n-bands", fe.n_bands, "Number of gammatone bands");
    cmd->add_option("--win-len", fe.win_len, "Analysis window length (samples)");
    cmd->add_option("--hop-len", fe.hop_len, "Hop length (samples)");
    cmd->add_option("--fft-size", fe.fft_size, "FFT size (samples)");
    cmd->add_option("--f-low", fe.f_low, "Lowest center frequency (Hz)");
    cmd->add_option("--f-high", fe.f_high, "Highest center frequency (Hz)");
    cmd->add_option("--log-floor", fe.log_floor, "Additive floor before the log");
    cmd->add_flag("--log-compress,!--no-log-compress", fe.log_compress,
                  "Apply 10*log10 compression (default on)");
}

int cmd_synth(const std::string& out_dir, const SynthConfig& cfg) {
    const auto index = synth_dataset(out_dir, cfg);
    std::cerr << "wrote " << index.entries.size() << " clips to " << out_dir << "\n";
    std::cerr << "metadata: meta_all.tsv, meta_train.tsv, meta_val.tsv\n";
    return 0;
}

int cmd_extract(const std::vector<std::string>& metas, const std::string& audio_root,
                const std::string& cache_dir, const FrontendConfig& fe, int jobs) {
    fe.validate();
    const auto index = parse_metadata_files(metas, Split::kTrain);
    const auto report = cache_features(index, audio_root, cache_dir, fe, jobs);
    std::cerr << "extracted " << report.computed << " recomputed, " << report.hits
              << " cache hits, " << report.failures.size() << " failures\n";
    for (const auto& [path, msg] : report.failures) std::cerr << "failed: " << path << ": " << msg << "\n";
    return report.failures.empty() ? 0 : 1;
}

int cmd_stats(const std::vector<std::string>& metas, const std::string& cache_dir,
              const std::string& out_path) {
    const FrontendConfig fe = load_cache_config(cache_dir);
    const CacheManifest manifest = load_manifest(cache_dir);
    const auto index = parse_metadata_files(metas, Split::kTrain);
    if (index.entries.empty()) throw InputError("no clips listed in the metadata");

    StatsAccumulator acc;
    for (const auto& e : index.entries) acc.add(load_cached_features(cache_dir, manifest, e.path));
    const NormStats stats = acc.finalize();
    save_norm_stats(out_path, stats, fe);
    std::cerr << "stats over " << stats.frame_count << " frames from " << index.entries.size()
              << " clips -> " << out_path << "\n";
    return 0;
}

struct TrainArgs {
    std::string cache_dir, stats_path, meta_train, meta_val, out_path, history_path;
    TrainConfig cfg;
    bool no_batchnorm = false;
    double dropout = 0.3;
    int channels = 40;
};

int cmd_train(const TrainArgs& args) {
    const auto [stats, frontend] = load_norm_stats(args.stats_path);

    const auto train_idx = parse_metadata_files({args.meta_train}, Split::kTrain);
    const auto val_idx = parse_metadata_files({args.meta_val}, Split::kVal);
    const auto train_set = load_examples(train_idx, Split::kTrain, args.cache_dir, &stats);
    const auto val_set = load_examples(val_idx, Split::kVal, args.cache_dir, &stats);

    ModelConfig mc;
    mc.channels = args.channels;
    mc.dropout_rate = args.dropout;
    mc.with_batchnorm = !args.no_batchnorm;
    Model model(mc);

    const auto result = train_model(model, train_set, val_set, args.cfg);

    const std::string csv = history_csv(result.state.history);
    const std::string hist_path =
        args.history_path.empty() ? args.out_path + ".history.csv" : args.history_path;
    write_file_atomic(hist_path, csv.data(), csv.size());

    Model best = *result.best_model;
    auto artifact = make_artifact(best, frontend, stats, scene_classes());
    save_artifact(artifact, args.out_path);

    std::printf("epochs_run: %zu\n", result.state.history.size());
    std::printf("best_epoch: %d\n", result.best_epoch);
    std::printf("best_val_acc: %.4f\n", result.best_val_acc);
    std::printf("final_val_acc: %.4f\n", result.state.history.back().val_acc);
    std::printf("model: %s\n", args.out_path.c_str());
    std::printf("history: %s\n", hist_path.c_str());
    return 0;
}

int cmd_eval(const std::string& model_path, const std::vector<std::string>& metas,
             const std::string& cache_dir, int batch_size) {
    const auto artifact = load_artifact(model_path);
    Model model = model_from_artifact(artifact);
    const auto index = parse_metadata_files(metas, Split::kTest);
    const auto examples = load_examples(index, Split::kTest, cache_dir, &artifact.stats);

    TrainConfig cfg;
    cfg.batch_size = batch_size;
    const auto m = evaluate(model, examples, cfg);
    std::printf("clips: %d\n", m.total);
    std::printf("overall_accuracy: %.4f\n", m.accuracy);
    std::printf("mean_focal_loss: %.6f\n", m.mean_focal_loss);
    for (const auto& [label, stat] : m.per_class)
        std::printf("class %s: %.4f (%d/%d)\n", label.c_str(), stat.accuracy(), stat.correct,
                    stat.total);
    for (const auto& [device, stat] : m.per_device)
        std::printf("device %s: %.4f (%d/%d)\n", device.c_str(), stat.accuracy(), stat.correct,
                    stat.total);
    return 0;
}

int cmd_predict(const std::string& model_path, const std::string& list_path,
                const std::string& audio_root, const std::string& out_path) {
    const auto artifact = load_artifact(model_path);
    Model model = model_from_artifact(artifact);

    std::vector<std::string> names;
    {
        const auto buf = read_file(list_path);
        std::istringstream is(std::string(buf.begin(), buf.end()));
        std::string line;
        while (std::getline(is, line)) {
            while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
            if (!line.empty()) names.push_back(line);
        }
    }

    std::string csv = "filename,scene_label\n";
    for (const auto& name : names) {
        const AudioClip clip = read_wav((fs::path(audio_root) / name).string());
        FeatureMatrix feat = gammatonegram(clip, artifact.frontend);
        feat = apply_normalization(feat, artifact.stats);
        Tensor x({1, feat.bands, feat.frames, 1});
        for (int b = 0; b < feat.bands; ++b)
            for (int t = 0; t < feat.frames; ++t) x.at4(0, b, t, 0) = feat.at(b, t);
        const Tensor probs = model.forward(x, Mode::kInfer);
        int best = 0;
        for (int k = 1; k < probs.dim(1); ++k)
            if (probs.at2(0, k) > probs.at2(0, best)) best = k;
        csv += name + "," + artifact.classes[static_cast<size_t>(best)] + "\n";
    }
    write_file_atomic(out_path, csv.data(), csv.size());
    std::cerr << "wrote " << names.size() << " predictions to " << out_path << "\n";
    return 0;
}

int cmd_export(const std::string& model_path, const std::string& out_path,
               const std::string& precision, bool fold_bn) {
    if (precision != "fp16" && precision != "fp32")
        throw ConfigError("--precision must be fp16 or fp32");
    auto artifact = load_artifact(model_path);
    Model model = model_from_artifact(artifact);
    if (fold_bn) model = fold_batchnorm(model);
    auto out = make_artifact(model, artifact.frontend, artifact.stats, artifact.classes);
    if (precision == "fp16") out = quantize_binary16(out);
    save_artifact(out, out_path);
    const auto rep = size_report(out);
    std::fprintf(stderr, "wrote %s (%s, %lld params, payload %.2f KB)\n", out_path.c_str(),
                 precision_name(rep.precision), static_cast<long long>(rep.param_count),
                 static_cast<double>(rep.payload_bytes) / 1000.0);
    return 0;
}

int cmd_size(const std::string& model_path) {
    const auto artifact = load_artifact(model_path);
    print_size_report(size_report(artifact), std::cout);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"acoustic scene classifier: gammatone front-end + SE residual CNN"};
    app.require_subcommand(1);
    app.set_config("--config", "", "Read options from a key = value file");

    // synth
    auto* synth = app.add_subcommand("synth", "Generate the synthetic test corpus");
    std::string synth_dir;
    SynthConfig synth_cfg;
    synth->add_option("--out-dir", synth_dir, "Output directory")->required();
    synth->add_option("--seed", synth_cfg.seed, "Random seed");
    synth->add_option("--clips-per-class", synth_cfg.clips_per_class, "Clips per scene class");
    synth->add_option("--duration", synth_cfg.duration_s, "Clip duration (seconds)");
    synth->add_option("--bits", synth_cfg.bits_per_sample, "PCM bit depth (16 or 24)");

    // extract
    auto* extract = app.add_subcommand("extract", "Extract and cache gammatone features");
    std::vector<std::string> ex_metas;
    std::string ex_root, ex_cache;
    int ex_jobs = 1;
    FrontendConfig ex_fe;
    extract->add_option("--meta", ex_metas, "Metadata TSV (repeatable)")->required();
    extract->add_option("--audio-root", ex_root, "Directory the metadata paths are relative to")
        ->required();
    extract->add_option("--cache", ex_cache, "Feature cache directory")->required();
    extract->add_option("--jobs", ex_jobs, "Parallel extraction workers");
    add_frontend_flags(extract, ex_fe);

    // stats
    auto* stats = app.add_subcommand("stats", "Accumulate per-band normalization statistics");
    std::vector<std::string> st_metas;
    std::string st_cache, st_out;
    stats->add_option("--meta", st_metas, "Metadata TSV of the split to aggregate (repeatable)")
        ->required();
    stats->add_option("--cache", st_cache, "Feature cache directory")->required();
    stats->add_option("--out", st_out, "Output stats file")->required();

    // train
    auto* train = app.add_subcommand("train", "Train the classifier");
    TrainArgs tr;
    train->add_option("--cache", tr.cache_dir, "Feature cache directory")->required();
    train->add_option("--stats", tr.stats_path, "Stats file from `asc stats`")->required();
    train->add_option("--meta-train", tr.meta_train, "Training split metadata")->required();
    train->add_option("--meta-val", tr.meta_val, "Validation split metadata")->required();
    train->add_option("--out", tr.out_path, "Output model artifact")->required();
    train->add_option("--history", tr.history_path, "History CSV path (default <out>.history.csv)");
    train->add_option("--seed", tr.cfg.seed, "Random seed");
    train->add_option("--max-epochs", tr.cfg.max_epochs, "Epoch cap");
    train->add_option("--batch-size", tr.cfg.batch_size, "Minibatch size");
    train->add_option("--lr", tr.cfg.initial_lr, "Initial learning rate");
    train->add_option("--alpha", tr.cfg.focal_alpha, "Focal loss alpha");
    train->add_option("--gamma", tr.cfg.focal_gamma, "Focal loss gamma");
    train->add_option("--channels", tr.channels, "Conv channels per block");
    train->add_option("--dropout", tr.dropout, "Dropout rate");
    train->add_flag("--no-batchnorm", tr.no_batchnorm, "Train without batch normalization");
    train->add_option("--target-train-acc", tr.cfg.target_train_acc,
                      "Stop once training accuracy reaches this value");
    train->add_option("--target-val-acc", tr.cfg.target_val_acc,
                      "Additionally require this validation accuracy before stopping");

    // eval
    auto* eval = app.add_subcommand("eval", "Evaluate a model on cached features");
    std::string ev_model, ev_cache;
    std::vector<std::string> ev_metas;
    int ev_batch = 32;
    eval->add_option("--model", ev_model, "Model artifact")->required();
    eval->add_option("--meta", ev_metas, "Metadata TSV (repeatable)")->required();
    eval->add_option("--cache", ev_cache, "Feature cache directory")->required();
    eval->add_option("--batch-size", ev_batch, "Evaluation batch size");

    // predict
    auto* predict = app.add_subcommand("predict", "Classify raw wav files");
    std::string pr_model, pr_list, pr_root, pr_out;
    predict->add_option("--model", pr_model, "Model artifact")->required();
    predict->add_option("--input-list", pr_list, "Text file with one wav filename per line")
        ->required();
    predict->add_option("--audio-root", pr_root, "Directory the filenames are relative to")
        ->required();
    predict->add_option("--out", pr_out, "Output predictions CSV")->required();

    // export
    auto* exprt = app.add_subcommand("export", "Re-encode a model artifact");
    std::string xp_model, xp_out, xp_precision = "fp16";
    bool xp_fold = true;
    exprt->add_option("--model", xp_model, "Source model artifact")->required();
    exprt->add_option("--out", xp_out, "Output model artifact")->required();
    exprt->add_option("--precision", xp_precision, "fp16 or fp32 (default fp16)");
    exprt->add_flag("--fold-bn,!--no-fold-bn", xp_fold,
                    "Fold batch norm into the convolutions (default on)");

    // size
    auto* size = app.add_subcommand("size", "Print the size report for a model artifact");
    std::string sz_model;
    size->add_option("--model", sz_model, "Model artifact")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }

    try {
        if (synth->parsed()) return cmd_synth(synth_dir, synth_cfg);
        if (extract->parsed()) return cmd_extract(ex_metas, ex_root, ex_cache, ex_fe, ex_jobs);
        if (stats->parsed()) return cmd_stats(st_metas, st_cache, st_out);
        if (train->parsed()) return cmd_train(tr);
        if (eval->parsed()) return cmd_eval(ev_model, ev_metas, ev_cache, ev_batch);
        if (predict->parsed()) return cmd_predict(pr_model, pr_list, pr_root, pr_out);
        if (exprt->parsed()) return cmd_export(xp_model, xp_out, xp_precision, xp_fold);
        if (size->parsed()) return cmd_size(sz_model);
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
