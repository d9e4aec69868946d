#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "denomae/render.hpp"
#include "denomae/signal.hpp"
#include "denomae/tensor.hpp"

namespace denomae::data {

// The five aligned image tensors for one example, canonical modality order.
struct ModalitySample {
    std::array<Tensor, 5> images;  // noisy_const, clean_const, noisy_sig, clean_sig, noise
};

struct GenConfig {
    std::string split = "pretrain";
    int samples = 512;
    std::vector<sig::Scheme> schemes = sig::all_schemes();
    double snr_min = -10.0;
    double snr_max = 10.0;
    int image_side = 32;
    uint64_t seed = 1;
    render::DecayConfig decay;
    std::filesystem::path out_dir;
    int threads = 0;  // 0 = decide from hardware and DENOMAE_THREADS

    void validate() const;
};

struct ManifestRecord {
    std::string sample_id;
    std::string label;
    double snr_db = 0.0;
    uint64_t seed = 0;
    std::map<std::string, std::string> files;  // modality -> path relative to dir
};

struct DatasetManifest {
    int version = 1;
    std::string split;
    std::filesystem::path dir;  // directory holding manifest.jsonl and tensors/
    std::vector<ManifestRecord> records;

    static DatasetManifest load(const std::filesystem::path& manifest_path);
    void save(const std::filesystem::path& manifest_path) const;

    // Path of one modality tensor of one record.
    std::filesystem::path tensor_path(const ManifestRecord& rec, const std::string& modality) const;
};

// Renders all five modalities of one example. Pure function of its inputs.
ModalitySample make_sample(sig::Scheme scheme, double snr_db, uint64_t seed, int image_side,
                           const render::DecayConfig& decay);

// Draws (scheme, snr, seed) per record from the master seed, renders the five
// modalities, writes tensors plus manifest.jsonl. Byte-identical on rerun;
// generation is parallel across samples.
DatasetManifest generate_dataset(const GenConfig& cfg);

// Loads selected modalities of every record into memory, canonical-index
// addressed (absent entries stay empty).
std::vector<ModalitySample> load_samples(const DatasetManifest& manifest,
                                         const std::vector<std::string>& modalities);

// Train/test splits must not share sample ids or generation seeds.
void assert_no_leakage(const DatasetManifest& train, const DatasetManifest& test);

// Worker pool size: explicit request, capped by DENOMAE_THREADS when set.
int effective_threads(int requested);

}  // namespace denomae::data
