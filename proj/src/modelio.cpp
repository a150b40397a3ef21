#include "asc/modelio.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <ostream>

#include "asc/float16.hpp"

namespace asc {

namespace {

constexpr char kArtifactMagic[4] = {'A', 'S', 'C', 'M'};
constexpr uint16_t kArtifactVersion = 1;
constexpr char kStatsMagic[4] = {'G', 'T', 'N', 'S'};
constexpr uint16_t kStatsVersion = 1;

std::vector<uint8_t> encode_values(const std::vector<double>& values, Precision precision) {
    ByteWriter w;
    if (precision == Precision::kFloat32) {
        for (double v : values) w.f32(static_cast<float>(v));
    } else {
        for (double v : values) w.u16(float_to_half(static_cast<float>(v)));
    }
    return w.take();
}

void write_frontend(ByteWriter& w, const FrontendConfig& cfg) {
    w.u32(static_cast<uint32_t>(cfg.sample_rate));
    w.u16(static_cast<uint16_t>(cfg.n_bands));
    w.u32(static_cast<uint32_t>(cfg.win_len));
    w.u32(static_cast<uint32_t>(cfg.hop_len));
    w.u32(static_cast<uint32_t>(cfg.fft_size));
    w.f64(cfg.f_low);
    w.f64(cfg.f_high);
    w.f64(cfg.log_floor);
    w.u8(cfg.log_compress ? 1 : 0);
}

FrontendConfig read_frontend(ByteReader& r) {
    FrontendConfig cfg;
    cfg.sample_rate = static_cast<int>(r.u32());
    cfg.n_bands = r.u16();
    cfg.win_len = static_cast<int>(r.u32());
    cfg.hop_len = static_cast<int>(r.u32());
    cfg.fft_size = static_cast<int>(r.u32());
    cfg.f_low = r.f64();
    cfg.f_high = r.f64();
    cfg.log_floor = r.f64();
    cfg.log_compress = r.u8() != 0;
    return cfg;
}

void write_stats(ByteWriter& w, const NormStats& st) {
    w.u16(static_cast<uint16_t>(st.mean.size()));
    w.u64(static_cast<uint64_t>(st.frame_count));
    for (double v : st.mean) w.f64(v);
    for (double v : st.stddev) w.f64(v);
}

NormStats read_stats(ByteReader& r) {
    NormStats st;
    const int bands = r.u16();
    st.frame_count = static_cast<int64_t>(r.u64());
    st.mean.resize(static_cast<size_t>(bands));
    st.stddev.resize(static_cast<size_t>(bands));
    for (auto& v : st.mean) v = r.f64();
    for (auto& v : st.stddev) v = r.f64();
    return st;
}

}  // namespace

std::vector<double> record_values(const ParamRecord& rec, Precision precision) {
    const size_t n = static_cast<size_t>(rec.numel());
    ByteReader r(rec.raw, "record " + rec.name);
    std::vector<double> out(n);
    if (precision == Precision::kFloat32) {
        for (auto& v : out) v = static_cast<double>(r.f32());
    } else {
        for (auto& v : out) v = static_cast<double>(half_to_float(r.u16()));
    }
    return out;
}

ModelArtifact make_artifact(Model& model, const FrontendConfig& frontend, const NormStats& stats,
                            const std::vector<std::string>& classes) {
    ModelArtifact a;
    a.precision = Precision::kFloat32;
    a.model = model.cfg;
    a.frontend = frontend;
    a.stats = stats;
    a.classes = classes;
    a.bn_stats_ready = !model.cfg.with_batchnorm || model.block1.bn1.stats_ready;
    for (const auto& p : model.state_tensors()) {
        ParamRecord rec;
        rec.name = p.name;
        rec.shape = p.tensor->shape;
        rec.raw = encode_values(p.tensor->data, a.precision);
        a.params.push_back(std::move(rec));
    }
    return a;
}

Model model_from_artifact(const ModelArtifact& artifact) {
    Model model(artifact.model);
    auto refs = model.state_tensors();
    if (refs.size() != artifact.params.size())
        throw FormatError("artifact has " + std::to_string(artifact.params.size()) +
                          " parameter records, model expects " + std::to_string(refs.size()));
    for (size_t i = 0; i < refs.size(); ++i) {
        const ParamRecord& rec = artifact.params[i];
        if (rec.name != refs[i].name)
            throw FormatError("artifact record '" + rec.name + "' does not match expected '" +
                              refs[i].name + "'");
        if (rec.shape != refs[i].tensor->shape)
            throw FormatError("artifact record '" + rec.name + "' has unexpected shape");
        refs[i].tensor->data = record_values(rec, artifact.precision);
    }
    if (artifact.model.with_batchnorm && artifact.bn_stats_ready) {
        model.block1.bn1.stats_ready = true;
        model.block1.bn2.stats_ready = true;
        model.block2.bn1.stats_ready = true;
        model.block2.bn2.stats_ready = true;
    }
    return model;
}

namespace {

Conv2d fold_conv(const Conv2d& conv, const BatchNorm2d& bn) {
    Conv2d out(conv.kh, conv.kw, conv.cin, conv.cout);
    const int cout = conv.cout;
    std::vector<double> scale(static_cast<size_t>(cout)), shift(static_cast<size_t>(cout));
    for (int c = 0; c < cout; ++c) {
        const double inv = 1.0 / std::sqrt(bn.running_var.data[static_cast<size_t>(c)] + bn.eps);
        scale[static_cast<size_t>(c)] = bn.gamma.data[static_cast<size_t>(c)] * inv;
        shift[static_cast<size_t>(c)] = bn.beta.data[static_cast<size_t>(c)];
    }
    for (size_t i = 0; i < conv.w.data.size(); ++i) {
        out.w.data[i] = conv.w.data[i] * scale[i % static_cast<size_t>(cout)];
    }
    for (int c = 0; c < cout; ++c) {
        const size_t ci = static_cast<size_t>(c);
        out.b.data[ci] = (conv.b.data[ci] - bn.running_mean.data[ci]) * scale[ci] + shift[ci];
    }
    return out;
}

}  // namespace

Model fold_batchnorm(const Model& model) {
    if (!model.cfg.with_batchnorm) return model;
    const auto check_ready = [](const BatchNorm2d& bn) {
        if (!bn.stats_ready)
            throw StateError("cannot fold batch norm: running statistics not initialized");
    };
    check_ready(model.block1.bn1);
    check_ready(model.block1.bn2);
    check_ready(model.block2.bn1);
    check_ready(model.block2.bn2);

    ModelConfig cfg = model.cfg;
    cfg.with_batchnorm = false;
    Model out(cfg);
    out.block1.conv1 = fold_conv(model.block1.conv1, model.block1.bn1);
    out.block1.conv2 = fold_conv(model.block1.conv2, model.block1.bn2);
    out.block2.conv1 = fold_conv(model.block2.conv1, model.block2.bn1);
    out.block2.conv2 = fold_conv(model.block2.conv2, model.block2.bn2);
    if (model.block1.shortcut) out.block1.shortcut = *model.block1.shortcut;
    if (model.block2.shortcut) out.block2.shortcut = *model.block2.shortcut;
    out.block1.se = model.block1.se;
    out.block2.se = model.block2.se;
    out.fc = model.fc;
    return out;
}

ModelArtifact quantize_binary16(const ModelArtifact& artifact) {
    if (artifact.precision == Precision::kFloat16) return artifact;
    ModelArtifact out = artifact;
    out.precision = Precision::kFloat16;
    for (size_t i = 0; i < artifact.params.size(); ++i) {
        const auto values = record_values(artifact.params[i], artifact.precision);
        out.params[i].raw = encode_values(values, Precision::kFloat16);
    }
    return out;
}

SizeReport size_report(const ModelArtifact& artifact) {
    SizeReport rep;
    rep.precision = artifact.precision;
    for (const auto& rec : artifact.params) {
        rep.param_count += rec.numel();
        for (double v : record_values(rec, artifact.precision))
            if (v != 0.0) ++rep.nonzero_param_count;
    }
    rep.payload_bytes = rep.param_count * precision_bytes(artifact.precision);
    rep.total_bytes = static_cast<int64_t>(serialize_artifact(artifact).size());
    return rep;
}

void print_size_report(const SizeReport& rep, std::ostream& os) {
    char buf[128];
    const double payload_kb = static_cast<double>(rep.payload_bytes) / 1000.0;
    const double total_kb = static_cast<double>(rep.total_bytes) / 1000.0;
    os << "precision:        " << precision_name(rep.precision) << "\n";
    os << "params:           " << rep.param_count << "\n";
    os << "nonzero_params:   " << rep.nonzero_param_count << "\n";
    os << "payload_bytes:    " << rep.payload_bytes << "\n";
    std::snprintf(buf, sizeof(buf), "%.2f", payload_kb);
    os << "payload_kb:       " << buf << "\n";
    os << "total_bytes:      " << rep.total_bytes << "\n";
    std::snprintf(buf, sizeof(buf), "%.2f", total_kb);
    os << "total_kb:         " << buf << "\n";
    std::snprintf(buf, sizeof(buf), "%.2f", kChallengeBudgetKb);
    os << "budget_kb:        " << buf << "\n";
    os << "within_budget:    " << (payload_kb <= kChallengeBudgetKb ? "yes" : "no") << "\n";
    std::snprintf(buf, sizeof(buf), "%.2f", kReferenceSystemKb);
    os << "reference_kb:     " << buf << "\n";
    std::snprintf(buf, sizeof(buf), "%+.2f%%", 100.0 * (payload_kb - kReferenceSystemKb) / kReferenceSystemKb);
    os << "reference_delta:  " << buf << "\n";
}

std::vector<uint8_t> serialize_artifact(const ModelArtifact& a) {
    ByteWriter w;
    w.bytes(kArtifactMagic, 4);
    w.u16(a.version);
    w.u8(static_cast<uint8_t>(a.precision));

    w.u16(static_cast<uint16_t>(a.classes.size()));
    for (const auto& c : a.classes) w.str16(c);
    write_frontend(w, a.frontend);
    write_stats(w, a.stats);
    w.u16(static_cast<uint16_t>(a.model.in_channels));
    w.u16(static_cast<uint16_t>(a.model.channels));
    w.u16(static_cast<uint16_t>(a.model.kernel));
    w.u16(static_cast<uint16_t>(a.model.se_ratio));
    w.u16(static_cast<uint16_t>(a.model.n_classes));
    w.u16(static_cast<uint16_t>(a.model.pool_w));
    w.f64(a.model.dropout_rate);
    w.u8(a.model.with_batchnorm ? 1 : 0);
    w.u8(a.bn_stats_ready ? 1 : 0);

    w.u32(static_cast<uint32_t>(a.params.size()));
    for (const auto& rec : a.params) {
        w.str16(rec.name);
        w.u8(static_cast<uint8_t>(rec.shape.size()));
        for (int d : rec.shape) w.u32(static_cast<uint32_t>(d));
        w.bytes(rec.raw.data(), rec.raw.size());
    }
    return w.take();
}

ModelArtifact parse_artifact(const uint8_t* data, size_t size, const std::string& context) {
    ByteReader r(data, size, context);
    char magic[4];
    r.bytes(magic, 4);
    if (std::memcmp(magic, kArtifactMagic, 4) != 0)
        throw FormatError(context + ": bad magic at offset 0 (not a model artifact)");
    ModelArtifact a;
    a.version = r.u16();
    if (a.version != kArtifactVersion)
        throw FormatError(context + ": unsupported version " + std::to_string(a.version) +
                          " at offset 4");
    const uint8_t prec = r.u8();
    if (prec > 1)
        throw FormatError(context + ": bad precision byte at offset 6");
    a.precision = static_cast<Precision>(prec);

    const int n_classes = r.u16();
    for (int i = 0; i < n_classes; ++i) a.classes.push_back(r.str16());
    a.frontend = read_frontend(r);
    a.stats = read_stats(r);
    a.model.in_channels = r.u16();
    a.model.channels = r.u16();
    a.model.kernel = r.u16();
    a.model.se_ratio = r.u16();
    a.model.n_classes = r.u16();
    a.model.pool_w = r.u16();
    a.model.dropout_rate = r.f64();
    a.model.with_batchnorm = r.u8() != 0;
    a.bn_stats_ready = r.u8() != 0;

    const uint32_t n_records = r.u32();
    for (uint32_t i = 0; i < n_records; ++i) {
        ParamRecord rec;
        rec.name = r.str16();
        const int rank = r.u8();
        rec.shape.resize(static_cast<size_t>(rank));
        for (auto& d : rec.shape) d = static_cast<int>(r.u32());
        const size_t payload = static_cast<size_t>(rec.numel()) *
                               static_cast<size_t>(precision_bytes(a.precision));
        rec.raw.resize(payload);
        r.bytes(rec.raw.data(), payload);
        a.params.push_back(std::move(rec));
    }
    if (r.remaining() != 0)
        throw FormatError(context + ": " + std::to_string(r.remaining()) +
                          " trailing bytes at offset " + std::to_string(r.offset()));
    return a;
}

void save_artifact(const ModelArtifact& artifact, const std::string& path) {
    const auto buf = serialize_artifact(artifact);
    write_file_atomic(path, buf.data(), buf.size());
}

ModelArtifact load_artifact(const std::string& path) {
    if (!std::filesystem::exists(path))
        throw ConfigError("model artifact not found: " + path);
    const auto buf = read_file(path);
    return parse_artifact(buf.data(), buf.size(), path);
}

void save_norm_stats(const std::string& path, const NormStats& stats, const FrontendConfig& frontend) {
    ByteWriter w;
    w.bytes(kStatsMagic, 4);
    w.u16(kStatsVersion);
    write_frontend(w, frontend);
    write_stats(w, stats);
    const auto& buf = w.buffer();
    write_file_atomic(path, buf.data(), buf.size());
}

std::pair<NormStats, FrontendConfig> load_norm_stats(const std::string& path) {
    if (!std::filesystem::exists(path))
        throw ConfigError("stats file not found: " + path + " (run `asc stats` first)");
    const auto buf = read_file(path);
    ByteReader r(buf, path);
    char magic[4];
    r.bytes(magic, 4);
    if (std::memcmp(magic, kStatsMagic, 4) != 0)
        throw FormatError(path + ": bad magic at offset 0 (not a stats file)");
    const uint16_t version = r.u16();
    if (version != kStatsVersion)
        throw FormatError(path + ": unsupported version " + std::to_string(version));
    FrontendConfig cfg = read_frontend(r);
    NormStats st = read_stats(r);
    if (r.remaining() != 0)
        throw FormatError(path + ": trailing bytes at offset " + std::to_string(r.offset()));
    return {std::move(st), cfg};
}

}  // namespace asc
