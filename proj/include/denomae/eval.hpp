#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "denomae/dataset.hpp"
#include "denomae/train.hpp"

namespace denomae::eval {

struct SweepConfig {
    std::vector<double> snrs = {-10.0, 0.0, 10.0};
    int samples_per_snr = 256;
    std::vector<sig::Scheme> schemes = sig::all_schemes();
    uint64_t seed = 99;
    render::DecayConfig decay;
    std::filesystem::path out_dir;
};

struct SweepRow {
    double snr_db = 0.0;
    double accuracy = 0.0;
    int n = 0;
};

// Classifies freshly generated per-SNR test sets and writes
// snr_sweep.tsv (snr_db, accuracy, n_samples). The full-scale reference
// anchors (77.50% at -10 dB, 84.30% at +10 dB) are carried as comment
// metadata for plotting against.
std::vector<SweepRow> evaluate_snr_sweep(const std::filesystem::path& classifier_ckpt,
                                         const SweepConfig& cfg);

struct ExtrapConfig {
    std::vector<double> snrs = {-12.0};
    int samples = 64;
    int triptychs = 4;  // PPM exports per SNR
    std::vector<sig::Scheme> schemes = sig::all_schemes();
    uint64_t seed = 77;
    render::DecayConfig decay;
    double train_snr_min = -10.0;  // evaluation must sit strictly below
    // Modalities presented to the model; the clean ones stay fully masked.
    std::vector<std::string> visible = {"noisy_const", "noisy_sig", "noise"};
    std::filesystem::path out_dir;
};

struct ExtrapRow {
    double snr_db = 0.0;
    double mse_denoised = 0.0;  // mean over samples vs clean constellation
    double mse_noisy = 0.0;     // noisy-as-is baseline
    double win_fraction = 0.0;  // samples where denoised beats the baseline
    int n = 0;
};

// Reconstructs clean constellations from noisy inputs at SNRs below the
// training range; writes denoise.tsv plus noisy|denoised|clean triptychs.
std::vector<ExtrapRow> evaluate_extrapolation(const std::filesystem::path& pretrain_ckpt,
                                              const ExtrapConfig& cfg);

struct AblationConfig {
    int pretrain_samples = 192;
    int finetune_samples = 192;
    int test_samples = 192;
    int pretrain_epochs = 12;
    int finetune_epochs = 30;
    int batch = 16;
    double pretrain_lr = 1e-3;
    double finetune_lr = 1e-3;
    std::vector<sig::Scheme> schemes = {sig::Scheme::bpsk, sig::Scheme::qpsk,
                                        sig::Scheme::qam16, sig::Scheme::fsk4};
    double snr_min = 0.0;
    double snr_max = 10.0;
    uint64_t seed = 5;
    model::ModelConfig model = model::ModelConfig::desk_scale();
    std::filesystem::path out_dir;
};

struct AblationRow {
    std::vector<std::string> modalities;
    double accuracy = 0.0;
    double reference = 0.0;  // full-scale reference accuracy for this subset
};

// The five nested modality subsets, smallest first.
const std::vector<std::vector<std::string>>& ablation_subsets();

// Pretrains and fine-tunes once per nested subset on shared data; writes
// ablation.tsv with the full-scale reference column.
std::vector<AblationRow> run_modality_ablation(const AblationConfig& cfg);

// Mean squared difference between two equally shaped tensors.
double tensor_mse(const Tensor& a, const Tensor& b);

}  // namespace denomae::eval
