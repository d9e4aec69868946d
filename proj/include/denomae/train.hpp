#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "denomae/dataset.hpp"
#include "denomae/model.hpp"

#include "json.hpp"

namespace denomae::train {

// Append-only JSON-lines metrics log with monotone step numbering and a
// timestamp per record.
class MetricsLog {
  public:
    explicit MetricsLog(const std::filesystem::path& path);
    void append(nlohmann::json record);

  private:
    std::filesystem::path path_;
    int64_t next_row_ = 0;
};

struct OptimSettings {
    double lr = 1e-3;
    int epochs = 30;
    int batch = 16;
};

struct PretrainConfig {
    model::ModelConfig model = model::ModelConfig::desk_scale();
    OptimSettings optim;
    double weight_decay = 0.01;
    uint64_t seed = 1;
    int ckpt_every = 0;  // epochs between checkpoints; 0 = final only
    std::filesystem::path out_dir;
};

struct PretrainResult {
    std::filesystem::path checkpoint;
    double step1_loss = 0.0;
    double final_loss = 0.0;
    int64_t steps = 0;
};

// AdamW over the masked multi-modal reconstruction loss. Deterministic for a
// fixed (manifest, config, seed); --resume replays the identical schedule
// because every stochastic draw is keyed by (seed, epoch, step, sample).
// A non-finite loss aborts with the offending batch's sample seeds logged.
PretrainResult pretrain(const data::DatasetManifest& manifest, const PretrainConfig& cfg,
                        const std::optional<std::filesystem::path>& resume = std::nullopt);

struct FinetuneConfig {
    model::ModelConfig model = model::ModelConfig::desk_scale();
    OptimSettings optim{1e-3, 40, 16};
    uint64_t seed = 1;
    bool from_scratch = false;
    bool freeze_encoder = false;
    std::filesystem::path out_dir;
};

struct FinetuneResult {
    std::filesystem::path checkpoint;
    double final_train_acc = 0.0;
    double final_test_acc = 0.0;
    std::vector<std::string> classes;
};

// Adam over softmax cross-entropy on the noisy-constellation modality,
// starting from a pretrained encoder or (from_scratch) a fresh one under the
// identical protocol.
FinetuneResult finetune(const data::DatasetManifest& train_manifest,
                        const data::DatasetManifest& test_manifest,
                        const std::optional<std::filesystem::path>& pretrain_ckpt,
                        const FinetuneConfig& cfg);

// Class list = sorted unique labels of the training manifest.
std::vector<std::string> class_list(const data::DatasetManifest& manifest);

// Accuracy of a classifier checkpoint state over labeled images.
double classifier_accuracy(model::ModelState& state, const std::vector<Tensor>& images,
                           const std::vector<int>& labels);

int argmax_label(const Tensor& logits);

}  // namespace denomae::train
