#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "asc/dsp.hpp"
#include "asc/nn.hpp"

namespace asc {

enum class Precision : uint8_t { kFloat32 = 0, kFloat16 = 1 };

inline const char* precision_name(Precision p) {
    return p == Precision::kFloat32 ? "binary32" : "binary16";
}
inline int precision_bytes(Precision p) { return p == Precision::kFloat32 ? 4 : 2; }

struct ParamRecord {
    std::string name;
    std::vector<int> shape;
    std::vector<uint8_t> raw;  // little-endian payload at the artifact precision

    int64_t numel() const {
        int64_t n = 1;
        for (int d : shape) n *= d;
        return n;
    }
    bool operator==(const ParamRecord&) const = default;
};

// Self-contained serialized model: weights plus everything inference needs
// (class vocabulary, normalization statistics, front-end configuration).
struct ModelArtifact {
    uint16_t version = 1;
    Precision precision = Precision::kFloat32;
    ModelConfig model;
    bool bn_stats_ready = false;
    FrontendConfig frontend;
    NormStats stats;
    std::vector<std::string> classes;
    std::vector<ParamRecord> params;

    bool operator==(const ModelArtifact&) const = default;
};

ModelArtifact make_artifact(Model& model, const FrontendConfig& frontend, const NormStats& stats,
                            const std::vector<std::string>& classes);
Model model_from_artifact(const ModelArtifact& artifact);

std::vector<double> record_values(const ParamRecord& rec, Precision precision);

// Merges each conv+BN pair into the convolution: W' = W g/sqrt(v+eps),
// b' = (b - m) g/sqrt(v+eps) + beta. The returned model has no batch-norm
// layers and matches the source in inference mode to rounding error.
Model fold_batchnorm(const Model& model);

ModelArtifact quantize_binary16(const ModelArtifact& artifact);

struct SizeReport {
    int64_t param_count = 0;
    int64_t nonzero_param_count = 0;
    int64_t payload_bytes = 0;
    int64_t total_bytes = 0;
    Precision precision = Precision::kFloat32;
};

// KB means 1000 bytes throughout the size accounting.
constexpr double kChallengeBudgetKb = 128.0;
constexpr double kReferenceSystemKb = 95.96;

SizeReport size_report(const ModelArtifact& artifact);
void print_size_report(const SizeReport& report, std::ostream& os);

// "ASCM" container: magic, u16 version, u8 precision, metadata block
// (classes, front-end config, norm stats, model config, record count), then
// parameter records (name, u8 rank, u32 dims, raw values). Little-endian.
std::vector<uint8_t> serialize_artifact(const ModelArtifact& artifact);
ModelArtifact parse_artifact(const uint8_t* data, size_t size, const std::string& context);

void save_artifact(const ModelArtifact& artifact, const std::string& path);
ModelArtifact load_artifact(const std::string& path);

// Normalization statistics file ("GTNS"): the stats plus the front-end
// configuration they were computed under.
void save_norm_stats(const std::string& path, const NormStats& stats, const FrontendConfig& frontend);
std::pair<NormStats, FrontendConfig> load_norm_stats(const std::string& path);

}  // namespace asc
