#include "asc/data.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <mutex>
#include <sstream>
#include <thread>

namespace fs = std::filesystem;

namespace asc {

const char* split_name(Split s) {
    switch (s) {
        case Split::kTrain: return "train";
        case Split::kVal: return "val";
        case Split::kTest: return "test";
    }
    return "?";
}

const std::vector<std::string>& scene_classes() {
    static const std::vector<std::string> classes = {
        "airport",       "bus",           "metro",             "metro_station",  "park",
        "public_square", "shopping_mall", "street_pedestrian", "street_traffic", "tram"};
    return classes;
}

const std::vector<std::string>& device_vocabulary() {
    static const std::vector<std::string> devices = {"a",  "b",  "c",  "s1", "s2", "s3",
                                                     "s4", "s5", "s6", "d0", "d1", "d2"};
    return devices;
}

namespace {

int class_id(const std::string& label) {
    const auto& classes = scene_classes();
    auto it = std::find(classes.begin(), classes.end(), label);
    return it == classes.end() ? -1 : static_cast<int>(it - classes.begin());
}

bool known_device(const std::string& d) {
    const auto& v = device_vocabulary();
    return std::find(v.begin(), v.end(), d) != v.end();
}

std::string basename_of(const std::string& path) {
    size_t slash = path.find_last_of("/\\");
    return slash == std::string::npos ? path : path.substr(slash + 1);
}

std::string strip_ext(const std::string& name) {
    size_t dot = name.find_last_of('.');
    return dot == std::string::npos ? name : name.substr(0, dot);
}

}  // namespace

std::string cache_stem(const std::string& path) { return strip_ext(basename_of(path)); }

DatasetIndex parse_metadata(const std::string& tsv_text, Split split) {
    DatasetIndex index;
    index.classes = scene_classes();

    std::istringstream is(tsv_text);
    std::string line;
    int lineno = 0;
    std::vector<bool> device_seen(device_vocabulary().size(), false);
    std::map<std::string, int> seen_paths;

    while (std::getline(is, line)) {
        ++lineno;
        while (!line.empty() && (line.back() == '\r' || line.back() == ' ' || line.back() == '\t'))
            line.pop_back();
        if (line.empty()) continue;
        if (lineno == 1 && line == "filename\tscene_label") continue;  // optional header

        const size_t tab = line.find('\t');
        if (tab == std::string::npos)
            throw FormatError("metadata line " + std::to_string(lineno) + ": expected one tab, found none");
        if (line.find('\t', tab + 1) != std::string::npos)
            throw FormatError("metadata line " + std::to_string(lineno) + ": expected one tab, found more");

        DatasetEntry e;
        e.path = line.substr(0, tab);
        e.scene_label = line.substr(tab + 1);
        e.split = split;
        e.label_id = class_id(e.scene_label);
        if (e.label_id < 0)
            throw FormatError("metadata line " + std::to_string(lineno) + ": unknown scene label '" +
                              e.scene_label + "'");
        if (seen_paths.count(e.path))
            throw FormatError("metadata line " + std::to_string(lineno) + ": duplicate path '" + e.path +
                              "' (first seen on line " + std::to_string(seen_paths[e.path]) + ")");
        seen_paths[e.path] = lineno;

        // scene-city-location-segment-device
        const std::string stem = cache_stem(e.path);
        std::vector<std::string> parts;
        size_t start = 0;
        while (true) {
            size_t dash = stem.find('-', start);
            if (dash == std::string::npos) {
                parts.push_back(stem.substr(start));
                break;
            }
            parts.push_back(stem.substr(start, dash - start));
            start = dash + 1;
        }
        if (parts.size() != 5)
            throw FormatError("metadata line " + std::to_string(lineno) + ": filename '" + stem +
                              "' does not match scene-city-location-segment-device");
        e.city = parts[1];
        e.device_id = parts[4];
        if (!known_device(e.device_id))
            throw FormatError("metadata line " + std::to_string(lineno) + ": unknown device token '" +
                              e.device_id + "'");

        index.entries.push_back(std::move(e));
    }

    const auto& vocab = device_vocabulary();
    for (const auto& e : index.entries) {
        auto it = std::find(vocab.begin(), vocab.end(), e.device_id);
        device_seen[static_cast<size_t>(it - vocab.begin())] = true;
    }
    for (size_t i = 0; i < vocab.size(); ++i)
        if (device_seen[i]) index.devices.push_back(vocab[i]);

    return index;
}

std::string serialize_metadata(const DatasetIndex& index) {
    std::string out = "filename\tscene_label\n";
    for (const auto& e : index.entries) {
        out += e.path;
        out += '\t';
        out += e.scene_label;
        out += '\n';
    }
    return out;
}

// ---------------------------------------------------------------- WAV I/O

namespace {

uint32_t rd_u32(const uint8_t* p) {
    return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
           (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}
uint16_t rd_u16(const uint8_t* p) { return static_cast<uint16_t>(p[0] | (p[1] << 8)); }

}  // namespace

AudioClip read_wav(const std::string& path) {
    const std::vector<uint8_t> buf = read_file(path);
    if (buf.size() < 12 || std::memcmp(buf.data(), "RIFF", 4) != 0 ||
        std::memcmp(buf.data() + 8, "WAVE", 4) != 0)
        throw FormatError(path + ": not a RIFF/WAVE file");

    uint16_t format = 0, channels = 0, bits = 0;
    uint32_t rate = 0;
    bool have_fmt = false;
    const uint8_t* data_ptr = nullptr;
    uint32_t data_size = 0;

    size_t off = 12;
    while (off + 8 <= buf.size()) {
        const char* tag = reinterpret_cast<const char*>(buf.data() + off);
        const uint32_t size = rd_u32(buf.data() + off + 4);
        const size_t body = off + 8;
        if (body + size > buf.size())
            throw FormatError(path + ": chunk '" + std::string(tag, 4) + "' overruns file at offset " +
                              std::to_string(off));
        if (std::memcmp(tag, "fmt ", 4) == 0) {
            if (size < 16) throw FormatError(path + ": fmt chunk too small");
            format = rd_u16(buf.data() + body);
            channels = rd_u16(buf.data() + body + 2);
            rate = rd_u32(buf.data() + body + 4);
            bits = rd_u16(buf.data() + body + 14);
            have_fmt = true;
        } else if (std::memcmp(tag, "data", 4) == 0) {
            data_ptr = buf.data() + body;
            data_size = size;
        }
        off = body + size + (size & 1);  // chunks are word-aligned
    }

    if (!have_fmt || data_ptr == nullptr) throw FormatError(path + ": missing fmt or data chunk");
    if (format != 1) throw FormatError(path + ": unsupported WAV format " + std::to_string(format) +
                                       " (integer PCM required)");
    if (channels != 1) throw FormatError(path + ": " + std::to_string(channels) +
                                         " channels (mono required)");
    if (bits != 16 && bits != 24)
        throw FormatError(path + ": " + std::to_string(bits) + "-bit samples (16 or 24 required)");
    if (rate != 44100)
        throw InputError(path + ": sample rate " + std::to_string(rate) +
                         " (44100 required, resampling not supported)");

    AudioClip clip;
    clip.sample_rate = static_cast<int>(rate);
    const int stride = bits / 8;
    const size_t n = data_size / static_cast<size_t>(stride);
    clip.samples.resize(n);
    if (bits == 16) {
        const double scale = 1.0 / 32768.0;
        for (size_t i = 0; i < n; ++i) {
            int16_t v = static_cast<int16_t>(data_ptr[2 * i] | (data_ptr[2 * i + 1] << 8));
            clip.samples[i] = static_cast<float>(v * scale);
        }
    } else {
        const double scale = 1.0 / 8388608.0;
        for (size_t i = 0; i < n; ++i) {
            int32_t v = static_cast<int32_t>(data_ptr[3 * i]) |
                        (static_cast<int32_t>(data_ptr[3 * i + 1]) << 8) |
                        (static_cast<int32_t>(data_ptr[3 * i + 2]) << 16);
            if (v & 0x800000) v |= ~0xFFFFFF;  // sign-extend
            clip.samples[i] = static_cast<float>(v * scale);
        }
    }
    return clip;
}

void write_wav(const std::string& path, const AudioClip& clip, int bits_per_sample) {
    if (bits_per_sample != 16 && bits_per_sample != 24)
        throw ConfigError("write_wav: bits_per_sample must be 16 or 24");
    const int stride = bits_per_sample / 8;
    const uint32_t data_size = static_cast<uint32_t>(clip.samples.size() * static_cast<size_t>(stride));

    ByteWriter w;
    w.bytes("RIFF", 4);
    w.u32(36 + data_size);
    w.bytes("WAVE", 4);
    w.bytes("fmt ", 4);
    w.u32(16);
    w.u16(1);  // integer PCM
    w.u16(1);  // mono
    w.u32(static_cast<uint32_t>(clip.sample_rate));
    w.u32(static_cast<uint32_t>(clip.sample_rate * stride));
    w.u16(static_cast<uint16_t>(stride));
    w.u16(static_cast<uint16_t>(bits_per_sample));
    w.bytes("data", 4);
    w.u32(data_size);

    if (bits_per_sample == 16) {
        for (float s : clip.samples) {
            double v = std::llround(static_cast<double>(s) * 32768.0);
            v = std::clamp(v, -32768.0, 32767.0);
            w.u16(static_cast<uint16_t>(static_cast<int16_t>(v)));
        }
    } else {
        for (float s : clip.samples) {
            long long v = std::llround(static_cast<double>(s) * 8388608.0);
            v = std::clamp(v, -8388608LL, 8388607LL);
            const uint32_t u = static_cast<uint32_t>(static_cast<int32_t>(v)) & 0xFFFFFF;
            w.u8(static_cast<uint8_t>(u));
            w.u8(static_cast<uint8_t>(u >> 8));
            w.u8(static_cast<uint8_t>(u >> 16));
        }
    }
    const auto& buf = w.buffer();
    write_file_atomic(path, buf.data(), buf.size());
}

// ---------------------------------------------------------------- synthesis

DatasetIndex synth_dataset(const std::string& out_dir, const SynthConfig& cfg) {
    const auto& classes = scene_classes();
    const std::vector<std::string> devices = {"d0", "d1", "d2"};
    const std::vector<double> tilt = {0.05, 0.2, 0.4};  // one-pole low-pass coefficients

    fs::create_directories(fs::path(out_dir) / "audio");

    DatasetIndex index;
    index.classes = classes;
    index.devices = devices;

    Rng rng(cfg.seed);
    const int n = static_cast<int>(cfg.duration_s * cfg.sample_rate);
    std::vector<float> signal(static_cast<size_t>(n));

    for (int k = 0; k < static_cast<int>(classes.size()); ++k) {
        const double f1 = 200.0 * (k + 1);
        const double f2 = 200.0 * (k + 1) * 1.5;
        for (int i = 0; i < cfg.clips_per_class; ++i) {
            const int dev = i % 3;
            const double amp = rng.uniform(0.4, 0.85);
            const double ph1 = rng.uniform(0.0, 6.283185307179586);
            const double ph2 = rng.uniform(0.0, 6.283185307179586);
            // -20 dB noise relative to the tone power; fundamental twice
            // the partial's amplitude so band energy peaks at f1
            const double sig_rms = amp * std::sqrt((1.0 + 0.25) / 2.0);
            const double noise_amp = 0.1 * sig_rms;

            const double w1 = 2.0 * 3.14159265358979323846 * f1 / cfg.sample_rate;
            const double w2 = 2.0 * 3.14159265358979323846 * f2 / cfg.sample_rate;
            double lp = 0.0;
            const double a = tilt[static_cast<size_t>(dev)];
            for (int t = 0; t < n; ++t) {
                double v = amp * (std::sin(w1 * t + ph1) + 0.5 * std::sin(w2 * t + ph2)) +
                           noise_amp * rng.normal();
                lp = (1.0 - a) * v + a * lp;
                signal[static_cast<size_t>(t)] = static_cast<float>(std::clamp(lp, -1.0, 1.0));
            }

            DatasetEntry e;
            e.scene_label = classes[static_cast<size_t>(k)];
            e.city = "synth";
            e.device_id = devices[static_cast<size_t>(dev)];
            e.label_id = k;
            e.path = "audio/" + e.scene_label + "-synth-" + std::to_string(k) + "-" +
                     std::to_string(i) + "-" + e.device_id + ".wav";

            AudioClip clip;
            clip.sample_rate = cfg.sample_rate;
            clip.samples = signal;
            write_wav((fs::path(out_dir) / e.path).string(), clip, cfg.bits_per_sample);
            index.entries.push_back(std::move(e));
        }
    }

    // 80/20 split stratified by (class, device): within each group the last
    // fifth (at least one clip when the group has two or more) goes to val.
    std::map<std::pair<int, std::string>, std::vector<size_t>> groups;
    for (size_t i = 0; i < index.entries.size(); ++i) {
        groups[{index.entries[i].label_id, index.entries[i].device_id}].push_back(i);
    }
    for (auto& [key, members] : groups) {
        const size_t m = members.size();
        const size_t n_val = m >= 2 ? std::max<size_t>(1, m / 5) : 0;
        for (size_t j = 0; j < m; ++j) {
            index.entries[members[j]].split = j >= m - n_val ? Split::kVal : Split::kTrain;
        }
    }

    auto write_meta = [&](const std::string& name, std::optional<Split> split) {
        DatasetIndex sub;
        sub.classes = index.classes;
        for (const auto& e : index.entries)
            if (!split || e.split == *split) sub.entries.push_back(e);
        const std::string text = serialize_metadata(sub);
        write_file_atomic((fs::path(out_dir) / name).string(), text.data(), text.size());
    };
    write_meta("meta_all.tsv", std::nullopt);
    write_meta("meta_train.tsv", Split::kTrain);
    write_meta("meta_val.tsv", Split::kVal);

    return index;
}

// ---------------------------------------------------------------- cache

std::string CacheManifest::to_text() const {
    std::string out;
    for (const auto& [path, rec] : entries) {
        out += path;
        out += '\t';
        out += rec.first;
        out += '\t';
        out += rec.second;
        out += '\n';
    }
    return out;
}

CacheManifest CacheManifest::from_text(const std::string& text) {
    CacheManifest m;
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const size_t t1 = line.find('\t');
        const size_t t2 = t1 == std::string::npos ? std::string::npos : line.find('\t', t1 + 1);
        if (t2 == std::string::npos)
            throw FormatError("cache manifest line " + std::to_string(lineno) + ": expected two tabs");
        m.entries[line.substr(0, t1)] = {line.substr(t1 + 1, t2 - t1 - 1), line.substr(t2 + 1)};
    }
    return m;
}

namespace {

std::string content_hash(const FrontendConfig& cfg, const std::vector<uint8_t>& audio_bytes) {
    const std::string cfg_text = cfg.to_text();
    uint64_t h = fnv1a64(reinterpret_cast<const uint8_t*>(cfg_text.data()), cfg_text.size());
    h = fnv1a64(audio_bytes.data(), audio_bytes.size(), h);
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace

CacheManifest load_manifest(const std::string& cache_dir) {
    const fs::path p = fs::path(cache_dir) / "manifest.tsv";
    if (!fs::exists(p)) return {};
    const auto buf = read_file(p.string());
    return CacheManifest::from_text(std::string(buf.begin(), buf.end()));
}

FrontendConfig load_cache_config(const std::string& cache_dir) {
    const fs::path p = fs::path(cache_dir) / "frontend.cfg";
    if (!fs::exists(p))
        throw ConfigError("no frontend.cfg in " + cache_dir + " (run `asc extract` first)");
    const auto buf = read_file(p.string());
    return FrontendConfig::from_text(std::string(buf.begin(), buf.end()));
}

CacheReport cache_features(const DatasetIndex& index, const std::string& audio_root,
                           const std::string& cache_dir, const FrontendConfig& cfg, int jobs) {
    cfg.validate();
    fs::create_directories(cache_dir);
    CacheManifest old_manifest = load_manifest(cache_dir);

    CacheManifest manifest;
    CacheReport report;
    std::mutex mu;
    std::atomic<size_t> next{0};

    auto worker = [&]() {
        while (true) {
            const size_t i = next.fetch_add(1);
            if (i >= index.entries.size()) break;
            const auto& e = index.entries[i];
            try {
                const std::string wav_path = (fs::path(audio_root) / e.path).string();
                const auto audio_bytes = read_file(wav_path);
                const std::string hash = content_hash(cfg, audio_bytes);
                const std::string gtf_name = cache_stem(e.path) + ".gtf";
                const fs::path gtf_path = fs::path(cache_dir) / gtf_name;

                bool hit = false;
                auto it = old_manifest.entries.find(e.path);
                if (it != old_manifest.entries.end() && it->second.second == hash &&
                    fs::exists(gtf_path)) {
                    hit = true;
                }
                if (!hit) {
                    AudioClip clip = read_wav(wav_path);
                    FeatureMatrix m = gammatonegram(clip, cfg);
                    save_features(gtf_path.string(), m);
                }
                std::lock_guard<std::mutex> lock(mu);
                manifest.entries[e.path] = {gtf_name, hash};
                if (hit) ++report.hits; else ++report.computed;
            } catch (const std::exception& ex) {
                std::lock_guard<std::mutex> lock(mu);
                report.failures.emplace_back(e.path, ex.what());
            }
        }
    };

    jobs = std::max(1, jobs);
    if (jobs == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int j = 0; j < jobs; ++j) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }

    const std::string mtext = manifest.to_text();
    write_file_atomic((fs::path(cache_dir) / "manifest.tsv").string(), mtext.data(), mtext.size());
    const std::string ctext = cfg.to_text();
    write_file_atomic((fs::path(cache_dir) / "frontend.cfg").string(), ctext.data(), ctext.size());
    return report;
}

FeatureMatrix load_cached_features(const std::string& cache_dir, const CacheManifest& manifest,
                                   const std::string& path) {
    auto it = manifest.entries.find(path);
    if (it == manifest.entries.end())
        throw InputError("no cache entry for " + path + " (run `asc extract` first)");
    return load_features((fs::path(cache_dir) / it->second.first).string());
}

std::vector<Example> load_examples(const DatasetIndex& index, Split split,
                                   const std::string& cache_dir, const NormStats* stats) {
    const CacheManifest manifest = load_manifest(cache_dir);
    std::vector<Example> out;
    for (const auto& e : index.entries) {
        if (e.split != split) continue;
        Example ex;
        ex.features = load_cached_features(cache_dir, manifest, e.path);
        if (stats) ex.features = apply_normalization(ex.features, *stats);
        ex.label_id = e.label_id;
        ex.scene_label = e.scene_label;
        ex.device_id = e.device_id;
        ex.path = e.path;
        out.push_back(std::move(ex));
    }
    return out;
}

}  // namespace asc
