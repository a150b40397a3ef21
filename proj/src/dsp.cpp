#include "asc/dsp.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <map>
#include <sstream>

#include <unsupported/Eigen/FFT>

namespace asc {

namespace {

constexpr double kEarQ = 9.26449;
constexpr double kMinBw = 24.7;
constexpr double kStdClamp = 1e-8;
constexpr double kPi = 3.14159265358979323846;

}  // namespace

void FrontendConfig::validate() const {
    if (sample_rate <= 0) throw ConfigError("sample_rate must be positive");
    if (n_bands < 1) throw ConfigError("n_bands must be >= 1");
    if (win_len <= 0 || hop_len <= 0) throw ConfigError("win_len and hop_len must be positive");
    if (hop_len > win_len) throw ConfigError("hop_len must not exceed win_len");
    if (win_len > fft_size) throw ConfigError("win_len must not exceed fft_size");
    if (!(f_low > 0.0)) throw ConfigError("f_low must be positive");
    if (!(f_low < f_high)) throw ConfigError("f_low must be below f_high");
    if (f_high > sample_rate / 2.0) throw ConfigError("f_high must not exceed the Nyquist frequency");
    if (!(log_floor > 0.0)) throw ConfigError("log_floor must be positive");
}

std::string FrontendConfig::to_text() const {
    std::ostringstream os;
    os << "sample_rate = " << sample_rate << "\n";
    os << "n_bands = " << n_bands << "\n";
    os << "win_len = " << win_len << "\n";
    os << "hop_len = " << hop_len << "\n";
    os << "fft_size = " << fft_size << "\n";
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", f_low);
    os << "f_low = " << buf << "\n";
    std::snprintf(buf, sizeof(buf), "%.17g", f_high);
    os << "f_high = " << buf << "\n";
    std::snprintf(buf, sizeof(buf), "%.17g", log_floor);
    os << "log_floor = " << buf << "\n";
    os << "log_compress = " << (log_compress ? 1 : 0) << "\n";
    return os.str();
}

FrontendConfig FrontendConfig::from_text(const std::string& text) {
    FrontendConfig cfg;
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw FormatError("frontend config line " + std::to_string(lineno) + ": missing '='");
        auto trim = [](std::string s) {
            size_t a = s.find_first_not_of(" \t");
            size_t b = s.find_last_not_of(" \t");
            return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
        };
        std::string key = trim(line.substr(0, eq));
        std::string val = trim(line.substr(eq + 1));
        try {
            if (key == "sample_rate") cfg.sample_rate = std::stoi(val);
            else if (key == "n_bands") cfg.n_bands = std::stoi(val);
            else if (key == "win_len") cfg.win_len = std::stoi(val);
            else if (key == "hop_len") cfg.hop_len = std::stoi(val);
            else if (key == "fft_size") cfg.fft_size = std::stoi(val);
            else if (key == "f_low") cfg.f_low = std::stod(val);
            else if (key == "f_high") cfg.f_high = std::stod(val);
            else if (key == "log_floor") cfg.log_floor = std::stod(val);
            else if (key == "log_compress") cfg.log_compress = std::stoi(val) != 0;
            else throw FormatError("frontend config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
        } catch (const std::invalid_argument&) {
            throw FormatError("frontend config line " + std::to_string(lineno) + ": bad value for '" + key + "'");
        }
    }
    return cfg;
}

std::vector<double> erb_space(int n_bands, double f_low, double f_high) {
    if (n_bands < 1) throw ConfigError("erb_space: n_bands must be >= 1");
    if (!(f_low > 0.0) || !(f_low < f_high)) throw ConfigError("erb_space: need 0 < f_low < f_high");

    const double c = kEarQ * kMinBw;
    const double step = (std::log(f_low + c) - std::log(f_high + c)) / n_bands;
    std::vector<double> cf(static_cast<size_t>(n_bands));
    for (int i = 1; i <= n_bands; ++i) {
        cf[static_cast<size_t>(i - 1)] = -c + std::exp(i * step) * (f_high + c);
    }
    for (int i = 0; i < n_bands; ++i) {
        if (!std::isfinite(cf[static_cast<size_t>(i)]))
            throw ConfigError("erb_space: non-finite center frequency");
        if (i > 0 && !(cf[static_cast<size_t>(i)] < cf[static_cast<size_t>(i - 1)]))
            throw ConfigError("erb_space: center frequencies not strictly decreasing");
    }
    return cf;
}

double erb_bandwidth(double f) { return kMinBw * (4.37 * f / 1000.0 + 1.0); }

double gammatone_weight(double f, double cf) {
    const double b = 1.019 * erb_bandwidth(cf);
    const double r = (f - cf) / b;
    const double d = 1.0 + r * r;
    return 1.0 / (d * d * d * d);
}

std::vector<double> gammatone_weights(const FrontendConfig& cfg) {
    cfg.validate();
    const std::vector<double> cf = erb_space(cfg.n_bands, cfg.f_low, cfg.f_high);
    const int n_bins = cfg.fft_size / 2 + 1;
    std::vector<double> w(static_cast<size_t>(cfg.n_bands) * n_bins);
    const double bin_hz = static_cast<double>(cfg.sample_rate) / cfg.fft_size;
    for (int r = 0; r < cfg.n_bands; ++r) {
        double* row = w.data() + static_cast<size_t>(r) * n_bins;
        double peak = 0.0;
        for (int k = 0; k < n_bins; ++k) {
            row[k] = gammatone_weight(k * bin_hz, cf[static_cast<size_t>(r)]);
            peak = std::max(peak, row[k]);
        }
        for (int k = 0; k < n_bins; ++k) row[k] /= peak;
    }
    return w;
}

std::vector<std::span<const float>> frame_signal(const AudioClip& clip, const FrontendConfig& cfg) {
    cfg.validate();
    const int64_t n = static_cast<int64_t>(clip.samples.size());
    if (n < cfg.win_len) {
        throw InputError("clip too short: " + std::to_string(n) + " samples, need at least " +
                         std::to_string(cfg.win_len));
    }
    const int64_t frames = (n - cfg.win_len) / cfg.hop_len + 1;
    std::vector<std::span<const float>> out;
    out.reserve(static_cast<size_t>(frames));
    for (int64_t j = 0; j < frames; ++j) {
        out.emplace_back(clip.samples.data() + j * cfg.hop_len, static_cast<size_t>(cfg.win_len));
    }
    return out;
}

namespace {

// Shared implementation so gammatonegram and the public power_spectrum are
// bit-identical: periodic Hann window, zero-pad to fft_size, |rfft|^2.
class SpectrumAnalyzer {
public:
    explicit SpectrumAnalyzer(const FrontendConfig& cfg) : cfg_(cfg) {
        window_.resize(static_cast<size_t>(cfg.win_len));
        for (int i = 0; i < cfg.win_len; ++i) {
            window_[static_cast<size_t>(i)] = 0.5 - 0.5 * std::cos(2.0 * kPi * i / cfg.win_len);
        }
        padded_.assign(static_cast<size_t>(cfg.fft_size), 0.0);
        fft_.SetFlag(Eigen::FFT<double>::HalfSpectrum);
    }

    void compute(std::span<const float> frame, std::vector<double>& out) {
        if (static_cast<int>(frame.size()) != cfg_.win_len)
            throw InputError("power_spectrum: frame length " + std::to_string(frame.size()) +
                             " does not match win_len " + std::to_string(cfg_.win_len));
        for (int i = 0; i < cfg_.win_len; ++i) {
            padded_[static_cast<size_t>(i)] = window_[static_cast<size_t>(i)] * frame[static_cast<size_t>(i)];
        }
        fft_.fwd(spectrum_, padded_);
        const int n_bins = cfg_.fft_size / 2 + 1;
        out.resize(static_cast<size_t>(n_bins));
        for (int k = 0; k < n_bins; ++k) {
            out[static_cast<size_t>(k)] = std::norm(spectrum_[static_cast<size_t>(k)]);
        }
    }

private:
    FrontendConfig cfg_;
    std::vector<double> window_;
    std::vector<double> padded_;
    std::vector<std::complex<double>> spectrum_;
    Eigen::FFT<double> fft_;
};

}  // namespace

std::vector<double> power_spectrum(std::span<const float> frame, const FrontendConfig& cfg) {
    cfg.validate();
    SpectrumAnalyzer an(cfg);
    std::vector<double> out;
    an.compute(frame, out);
    return out;
}

FeatureMatrix gammatonegram(const AudioClip& clip, const FrontendConfig& cfg) {
    cfg.validate();
    if (clip.samples.empty()) throw InputError("gammatonegram: empty clip");
    if (clip.sample_rate != cfg.sample_rate) {
        throw InputError("gammatonegram: clip sample rate " + std::to_string(clip.sample_rate) +
                         " does not match configured " + std::to_string(cfg.sample_rate));
    }
    const auto frames = frame_signal(clip, cfg);
    const auto weights = gammatone_weights(cfg);
    const int n_bins = cfg.fft_size / 2 + 1;

    FeatureMatrix m(cfg.n_bands, static_cast<int>(frames.size()));
    SpectrumAnalyzer an(cfg);
    std::vector<double> power;
    for (size_t t = 0; t < frames.size(); ++t) {
        an.compute(frames[t], power);
        for (int r = 0; r < cfg.n_bands; ++r) {
            const double* wrow = weights.data() + static_cast<size_t>(r) * n_bins;
            double acc = 0.0;
            for (int k = 0; k < n_bins; ++k) acc += wrow[k] * power[static_cast<size_t>(k)];
            const double v = cfg.log_compress ? 10.0 * std::log10(acc + cfg.log_floor) : acc;
            m.at(r, static_cast<int>(t)) = static_cast<float>(v);
        }
    }
    return m;
}

void StatsAccumulator::add(const FeatureMatrix& m) {
    if (bands_ == 0) {
        bands_ = m.bands;
        sum_.assign(static_cast<size_t>(bands_), 0.0);
        sumsq_.assign(static_cast<size_t>(bands_), 0.0);
    }
    if (m.bands != bands_) throw InputError("stats accumulation: band count mismatch");
    for (int r = 0; r < bands_; ++r) {
        double s = 0.0, s2 = 0.0;
        for (int t = 0; t < m.frames; ++t) {
            const double v = m.at(r, t);
            s += v;
            s2 += v * v;
        }
        sum_[static_cast<size_t>(r)] += s;
        sumsq_[static_cast<size_t>(r)] += s2;
    }
    count_ += m.frames;
}

void StatsAccumulator::merge(const StatsAccumulator& other) {
    if (other.bands_ == 0) return;
    if (bands_ == 0) {
        *this = other;
        return;
    }
    if (other.bands_ != bands_) throw InputError("stats merge: band count mismatch");
    for (int r = 0; r < bands_; ++r) {
        sum_[static_cast<size_t>(r)] += other.sum_[static_cast<size_t>(r)];
        sumsq_[static_cast<size_t>(r)] += other.sumsq_[static_cast<size_t>(r)];
    }
    count_ += other.count_;
}

NormStats StatsAccumulator::finalize() const {
    if (count_ < 2) throw InputError("stats accumulation: need at least 2 frames, saw " + std::to_string(count_));
    NormStats st;
    st.frame_count = count_;
    st.mean.resize(static_cast<size_t>(bands_));
    st.stddev.resize(static_cast<size_t>(bands_));
    const double n = static_cast<double>(count_);
    for (int r = 0; r < bands_; ++r) {
        const double mean = sum_[static_cast<size_t>(r)] / n;
        double var = sumsq_[static_cast<size_t>(r)] / n - mean * mean;
        if (var < 0.0) var = 0.0;  // round-off guard
        st.mean[static_cast<size_t>(r)] = mean;
        st.stddev[static_cast<size_t>(r)] = std::max(std::sqrt(var), kStdClamp);
    }
    return st;
}

NormStats accumulate_stats(const std::vector<FeatureMatrix>& features) {
    if (features.empty()) throw InputError("stats accumulation: empty feature stream");
    StatsAccumulator acc;
    for (const auto& m : features) acc.add(m);
    return acc.finalize();
}

FeatureMatrix apply_normalization(const FeatureMatrix& m, const NormStats& stats) {
    if (static_cast<size_t>(m.bands) != stats.mean.size())
        throw InputError("normalization: stats have " + std::to_string(stats.mean.size()) +
                         " bands, features have " + std::to_string(m.bands));
    FeatureMatrix out(m.bands, m.frames);
    for (int r = 0; r < m.bands; ++r) {
        const double mu = stats.mean[static_cast<size_t>(r)];
        const double sd = stats.stddev[static_cast<size_t>(r)];
        for (int t = 0; t < m.frames; ++t) {
            out.at(r, t) = static_cast<float>((m.at(r, t) - mu) / sd);
        }
    }
    return out;
}

namespace {
constexpr char kFeatureMagic[4] = {'G', 'T', 'F', 'C'};
constexpr uint16_t kFeatureVersion = 1;
}  // namespace

std::vector<uint8_t> serialize_features(const FeatureMatrix& m) {
    ByteWriter w;
    w.bytes(kFeatureMagic, 4);
    w.u16(kFeatureVersion);
    w.u16(static_cast<uint16_t>(m.bands));
    w.u32(static_cast<uint32_t>(m.frames));
    for (float v : m.values) w.f32(v);
    return w.take();
}

FeatureMatrix parse_features(const uint8_t* data, size_t size, const std::string& context) {
    ByteReader r(data, size, context);
    char magic[4];
    r.bytes(magic, 4);
    if (std::memcmp(magic, kFeatureMagic, 4) != 0)
        throw FormatError(context + ": bad magic at offset 0 (not a feature cache file)");
    const uint16_t version = r.u16();
    if (version != kFeatureVersion)
        throw FormatError(context + ": unsupported version " + std::to_string(version) +
                          " at offset 4");
    const int bands = r.u16();
    const int frames = static_cast<int>(r.u32());
    FeatureMatrix m(bands, frames);
    for (auto& v : m.values) v = r.f32();
    return m;
}

void save_features(const std::string& path, const FeatureMatrix& m) {
    const auto buf = serialize_features(m);
    write_file_atomic(path, buf.data(), buf.size());
}

FeatureMatrix load_features(const std::string& path) {
    const auto buf = read_file(path);
    return parse_features(buf.data(), buf.size(), path);
}

}  // namespace asc
