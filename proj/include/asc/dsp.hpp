#pragma once

#include <span>
#include <string>
#include <vector>

#include "asc/common.hpp"

namespace asc {

struct AudioClip {
    std::vector<float> samples;  // mono, amplitudes in [-1, 1]
    int sample_rate = 0;
};

struct FrontendConfig {
    int sample_rate = 44100;
    int n_bands = 64;
    int win_len = 1764;   // 40 ms at 44.1 kHz
    int hop_len = 882;    // 50 % overlap
    int fft_size = 2048;
    double f_low = 20.0;
    double f_high = 22050.0;
    double log_floor = 1e-10;
    bool log_compress = true;

    void validate() const;  // throws ConfigError
    bool operator==(const FrontendConfig&) const = default;

    // key = value text, one field per line (same keys as the CLI flags)
    std::string to_text() const;
    static FrontendConfig from_text(const std::string& text);
};

// bands x frames, row-major
struct FeatureMatrix {
    int bands = 0;
    int frames = 0;
    std::vector<float> values;

    FeatureMatrix() = default;
    FeatureMatrix(int b, int t) : bands(b), frames(t), values(static_cast<size_t>(b) * t, 0.0f) {}
    float& at(int b, int t) { return values[static_cast<size_t>(b) * frames + t]; }
    float at(int b, int t) const { return values[static_cast<size_t>(b) * frames + t]; }
    bool operator==(const FeatureMatrix&) const = default;
};

struct NormStats {
    std::vector<double> mean;
    std::vector<double> stddev;  // clamped to >= 1e-8
    int64_t frame_count = 0;
    bool operator==(const NormStats&) const = default;
};

// ERB-scale center frequencies, descending; cf[n_bands-1] == f_low exactly.
std::vector<double> erb_space(int n_bands, double f_low, double f_high);

// Equivalent rectangular bandwidth at frequency f.
double erb_bandwidth(double f);

// Spectral gammatone weight at frequency f for a filter centered at cf,
// before peak normalization: (1 + ((f - cf)/b)^2)^-4 with b = 1.019 ERB(cf).
double gammatone_weight(double f, double cf);

// n_bands x (fft_size/2 + 1) row-major weight matrix, each row peak-normalized to 1.
std::vector<double> gammatone_weights(const FrontendConfig& cfg);

// Non-overlapping views into the clip; frame j covers [j*hop, j*hop + win).
std::vector<std::span<const float>> frame_signal(const AudioClip& clip, const FrontendConfig& cfg);

// Hann-windowed, zero-padded power spectrum; out[k] is the squared magnitude
// at f_k = k * sample_rate / fft_size.
std::vector<double> power_spectrum(std::span<const float> frame, const FrontendConfig& cfg);

FeatureMatrix gammatonegram(const AudioClip& clip, const FrontendConfig& cfg);

// Streaming per-band moment accumulator; partial accumulators merge exactly
// (running sums add), so corpus scans can be parallelized with a fixed
// reduce order.
class StatsAccumulator {
public:
    void add(const FeatureMatrix& m);
    void merge(const StatsAccumulator& other);
    NormStats finalize() const;  // throws InputError when fewer than 2 frames seen
    int64_t frame_count() const { return count_; }

private:
    int bands_ = 0;
    int64_t count_ = 0;
    std::vector<double> sum_;
    std::vector<double> sumsq_;
};

NormStats accumulate_stats(const std::vector<FeatureMatrix>& features);

FeatureMatrix apply_normalization(const FeatureMatrix& m, const NormStats& stats);

// Feature cache file: "GTFC", u16 version, u16 bands, u32 frames,
// bands x frames float32 row-major, little-endian.
void save_features(const std::string& path, const FeatureMatrix& m);
FeatureMatrix load_features(const std::string& path);

std::vector<uint8_t> serialize_features(const FeatureMatrix& m);
FeatureMatrix parse_features(const uint8_t* data, size_t size, const std::string& context);

}  // namespace asc
