#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "asc/dsp.hpp"

namespace asc {

enum class Split { kTrain, kVal, kTest };

const char* split_name(Split s);

struct DatasetEntry {
    std::string path;  // as written in the metadata file, e.g. "audio/airport-barcelona-0-0-a.wav"
    std::string scene_label;
    std::string city;
    std::string device_id;
    Split split = Split::kTrain;
    int label_id = -1;
    bool operator==(const DatasetEntry&) const = default;
};

struct DatasetIndex {
    std::vector<DatasetEntry> entries;
    std::vector<std::string> classes;  // fixed 10-class vocabulary
    std::vector<std::string> devices;  // devices present, in vocabulary order
    bool operator==(const DatasetIndex&) const = default;
};

// The ten scene classes, in label-id order.
const std::vector<std::string>& scene_classes();
// Device tokens accepted in filenames: the TAU devices a, b, c, s1..s6 plus
// the synthetic corpus devices d0, d1, d2.
const std::vector<std::string>& device_vocabulary();

// Tab-separated rows "filename<TAB>scene_label", optional header, city and
// device parsed from the filename pattern scene-city-location-segment-device.wav.
// All entries get the given split (the dataset convention is one file per split).
DatasetIndex parse_metadata(const std::string& tsv_text, Split split);
std::string serialize_metadata(const DatasetIndex& index);

AudioClip read_wav(const std::string& path);
void write_wav(const std::string& path, const AudioClip& clip, int bits_per_sample);

struct SynthConfig {
    uint64_t seed = 42;
    int clips_per_class = 30;
    double duration_s = 2.2;
    int sample_rate = 44100;
    int bits_per_sample = 24;
};

// Writes <out_dir>/audio/*.wav plus meta_all.tsv / meta_train.tsv /
// meta_val.tsv and returns the index with split assignments. Class k mixes
// sinusoids at 200(k+1) Hz and 300(k+1) Hz over a -20 dB noise floor; the
// three devices d0/d1/d2 apply one-pole low-pass tilts of distinct strength.
DatasetIndex synth_dataset(const std::string& out_dir, const SynthConfig& cfg);

struct CacheManifest {
    // path -> (cache file name, content hash hex)
    std::map<std::string, std::pair<std::string, std::string>> entries;

    std::string to_text() const;
    static CacheManifest from_text(const std::string& text);
};

struct CacheReport {
    int computed = 0;
    int hits = 0;
    std::vector<std::pair<std::string, std::string>> failures;  // (path, message)
};

// Extracts gammatonegram features for every index entry into
// <cache_dir>/<stem>.gtf, skipping entries whose (config, audio bytes) hash
// already matches the manifest. Writes manifest.tsv and frontend.cfg.
CacheReport cache_features(const DatasetIndex& index, const std::string& audio_root,
                           const std::string& cache_dir, const FrontendConfig& cfg, int jobs = 1);

std::string cache_stem(const std::string& path);

// Loads the cached features for one metadata path via the manifest.
FeatureMatrix load_cached_features(const std::string& cache_dir, const CacheManifest& manifest,
                                   const std::string& path);

CacheManifest load_manifest(const std::string& cache_dir);
FrontendConfig load_cache_config(const std::string& cache_dir);

// One classified example in memory: normalized features plus labels.
struct Example {
    FeatureMatrix features;
    int label_id = -1;
    std::string scene_label;
    std::string device_id;
    std::string path;
};

// Loads, and optionally normalizes, the cached features of every entry with
// the given split.
std::vector<Example> load_examples(const DatasetIndex& index, Split split,
                                   const std::string& cache_dir, const NormStats* stats);

}  // namespace asc
