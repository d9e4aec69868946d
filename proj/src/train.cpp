#include "denomae/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <limits>
#include <set>

#include "denomae/checkpoint.hpp"
#include "denomae/errors.hpp"
#include "denomae/param.hpp"

namespace denomae::train {

namespace {

std::string iso_timestamp() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    char buf[32];
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::vector<int> shuffled_indices(size_t n, RngStream rng) {
    std::vector<int> idx(n);
    for (size_t i = 0; i < n; ++i) idx[i] = static_cast<int>(i);
    for (size_t i = 0; i + 1 < n; ++i) {
        const size_t j = i + rng.next_below(n - i);
        std::swap(idx[i], idx[j]);
    }
    return idx;
}

// Mask plans for one sample at one step. With shared_mask a single plan is
// drawn and reused across modalities.
std::vector<model::MaskPlan> draw_plans(const model::ModelConfig& cfg, uint64_t seed, int epoch,
                                        int64_t step, uint64_t sample_seed) {
    const int n = cfg.n_patches();
    std::vector<model::MaskPlan> plans;
    plans.reserve(cfg.n_modalities());
    RngStream base = RngStream(seed).child(rng_tag::mask_plan, epoch, step).child(sample_seed);
    if (cfg.shared_mask) {
        RngStream s = base.child(0);
        const auto plan = model::sample_mask(n, cfg.mask_ratio, s);
        for (int m = 0; m < cfg.n_modalities(); ++m) plans.push_back(plan);
    } else {
        for (int m = 0; m < cfg.n_modalities(); ++m) {
            RngStream s = base.child(m);
            plans.push_back(model::sample_mask(n, cfg.mask_ratio, s));
        }
    }
    return plans;
}

}  // namespace

MetricsLog::MetricsLog(const std::filesystem::path& path) : path_(path) {
    std::filesystem::create_directories(path.parent_path());
    if (std::filesystem::exists(path_)) {
        std::ifstream f(path_);
        std::string line;
        while (std::getline(f, line)) {
            if (!line.empty()) ++next_row_;
        }
    }
}

void MetricsLog::append(nlohmann::json record) {
    record["row"] = next_row_++;
    record["ts"] = iso_timestamp();
    std::ofstream f(path_, std::ios::app);
    if (!f) throw IoError("cannot append metrics: " + path_.string());
    f << record.dump() << "\n";
}

PretrainResult pretrain(const data::DatasetManifest& manifest, const PretrainConfig& cfg,
                        const std::optional<std::filesystem::path>& resume) {
    cfg.model.validate();
    if (cfg.optim.epochs <= 0 || cfg.optim.batch <= 0) {
        throw ConfigError("pretrain: epochs and batch must be positive");
    }
    if (manifest.records.empty()) throw DataError("pretrain: manifest has no records");
    std::filesystem::create_directories(cfg.out_dir);

    const auto samples = data::load_samples(manifest, cfg.model.modalities);

    model::ModelState state = model::ModelState::init(cfg.model, cfg.seed);
    int start_epoch = 0;
    int64_t step = 0;
    if (resume) {
        LoadedCheckpoint loaded = load_checkpoint(*resume);
        if (loaded.state.cfg.to_json() != cfg.model.to_json()) {
            throw ConfigError("pretrain: checkpoint config does not match run config");
        }
        state = std::move(loaded.state);
        start_epoch = loaded.extra.value("epoch", 0);
        step = loaded.extra.value("step", int64_t{0});
    }

    MetricsLog metrics(cfg.out_dir / "metrics.jsonl");
    AdamConfig adam;
    adam.lr = cfg.optim.lr;
    adam.weight_decay = cfg.weight_decay;
    const auto params = state.pretrain_params();

    const int n_mod = cfg.model.n_modalities();
    PretrainResult result;
    result.step1_loss = resume ? std::numeric_limits<double>::quiet_NaN() : 0.0;

    auto save_ckpt = [&](const std::filesystem::path& path, int epoch_done) {
        nlohmann::json extra;
        extra["kind"] = "pretrain";
        extra["epoch"] = epoch_done;
        extra["step"] = step;
        extra["seed"] = cfg.seed;
        extra["optim"] = {{"lr", cfg.optim.lr},
                          {"epochs", cfg.optim.epochs},
                          {"batch", cfg.optim.batch},
                          {"weight_decay", cfg.weight_decay}};
        save_checkpoint(state, extra, path);
    };

    for (int epoch = start_epoch; epoch < cfg.optim.epochs; ++epoch) {
        const auto order =
            shuffled_indices(samples.size(), RngStream(cfg.seed).child(rng_tag::shuffle, epoch));
        for (size_t at = 0; at < order.size(); at += cfg.optim.batch) {
            const size_t batch_end = std::min(order.size(), at + cfg.optim.batch);
            const int batch_n = static_cast<int>(batch_end - at);

            std::vector<uint64_t> batch_seeds;
            for (size_t bi = at; bi < batch_end; ++bi) {
                batch_seeds.push_back(manifest.records[order[bi]].seed);
            }
            auto abort_numeric = [&](const std::string& why) -> NumericError {
                nlohmann::json abort;
                abort["event"] = "nan_abort";
                abort["epoch"] = epoch;
                abort["step"] = step;
                abort["reason"] = why;
                abort["batch_seeds"] = batch_seeds;
                metrics.append(std::move(abort));
                return NumericError("pretrain: numeric abort at step " + std::to_string(step) +
                                    " (" + why + "); offending batch seeds logged");
            };

            double loss_value = 0.0;
            std::vector<double> mod_losses(n_mod, 0.0);
            try {
                Tape<float> tape;
                auto bound = model::bind_model(tape, state, true);
                Tape<float>::Ref total;
                for (size_t bi = at; bi < batch_end; ++bi) {
                    const int si = order[bi];
                    const uint64_t sample_seed = manifest.records[si].seed;
                    std::vector<Tensor> images(n_mod);
                    for (int m = 0; m < n_mod; ++m) {
                        const int canon =
                            model::canonical_modality_index(cfg.model.modalities[m]);
                        images[m] = samples[si].images[canon];
                    }
                    const auto plans =
                        draw_plans(cfg.model, cfg.seed, epoch, step, sample_seed);
                    const auto loss = model::pretrain_loss_forward(bound, images, plans);
                    for (int m = 0; m < n_mod; ++m) {
                        mod_losses[m] += tape.val(loss.per_modality[m]).data[0];
                    }
                    total = total.valid() ? tape.add(total, loss.total) : loss.total;
                }
                total = tape.scale(total, 1.0 / batch_n);
                loss_value = tape.val(total).data[0];
                if (!std::isfinite(loss_value)) throw abort_numeric("non-finite loss");

                tape.backward(total);
                model::harvest_grads(tape, bound);
                adamw_step(params, adam, /*zero_grads=*/true);
            } catch (const NumericError& e) {
                if (std::string(e.what()).find("offending batch seeds") != std::string::npos) {
                    throw;
                }
                throw abort_numeric(e.what());
            }
            step += 1;
            if (step == 1) result.step1_loss = loss_value;
            result.final_loss = loss_value;

            nlohmann::json rec;
            rec["event"] = "pretrain_step";
            rec["epoch"] = epoch;
            rec["step"] = step;
            rec["loss"] = loss_value;
            for (int m = 0; m < n_mod; ++m) {
                rec["loss_" + cfg.model.modalities[m]] = mod_losses[m] / batch_n;
            }
            rec["lr"] = adam.lr;
            metrics.append(std::move(rec));
        }
        if (cfg.ckpt_every > 0 && (epoch + 1) % cfg.ckpt_every == 0 &&
            epoch + 1 < cfg.optim.epochs) {
            save_ckpt(cfg.out_dir / ("checkpoint_epoch" + std::to_string(epoch + 1) + ".dmae"),
                      epoch + 1);
        }
    }

    result.checkpoint = cfg.out_dir / "checkpoint.dmae";
    save_ckpt(result.checkpoint, cfg.optim.epochs);
    result.steps = step;
    return result;
}

std::vector<std::string> class_list(const data::DatasetManifest& manifest) {
    std::set<std::string> labels;
    for (const auto& r : manifest.records) labels.insert(r.label);
    return {labels.begin(), labels.end()};
}

int argmax_label(const Tensor& logits) {
    int best = 0;
    for (int64_t i = 1; i < logits.numel(); ++i) {
        if (logits.data[i] > logits.data[best]) best = static_cast<int>(i);
    }
    return best;
}

namespace {

struct LabeledSet {
    std::vector<Tensor> images;
    std::vector<int> labels;
};

LabeledSet load_labeled(const data::DatasetManifest& manifest,
                        const std::vector<std::string>& classes) {
    LabeledSet set;
    set.images.reserve(manifest.records.size());
    for (const auto& rec : manifest.records) {
        const auto it = std::find(classes.begin(), classes.end(), rec.label);
        if (it == classes.end()) {
            throw DataError("label '" + rec.label + "' of " + rec.sample_id +
                            " is outside the training class set");
        }
        set.labels.push_back(static_cast<int>(it - classes.begin()));
        set.images.push_back(load_tensor(manifest.tensor_path(rec, "noisy_const")));
    }
    return set;
}

double eval_accuracy(model::ModelState& state, const LabeledSet& set) {
    int correct = 0;
    for (size_t i = 0; i < set.images.size(); ++i) {
        Tape<float> tape;
        auto bound = model::bind_model(tape, state, false);
        const auto logits = model::classify_logits(bound, set.images[i], false, nullptr);
        if (argmax_label(tape.val(logits)) == set.labels[i]) ++correct;
    }
    return set.images.empty() ? 0.0 : static_cast<double>(correct) / set.images.size();
}

}  // namespace

double classifier_accuracy(model::ModelState& state, const std::vector<Tensor>& images,
                           const std::vector<int>& labels) {
    LabeledSet set;
    set.images = images;
    set.labels = labels;
    return eval_accuracy(state, set);
}

FinetuneResult finetune(const data::DatasetManifest& train_manifest,
                        const data::DatasetManifest& test_manifest,
                        const std::optional<std::filesystem::path>& pretrain_ckpt,
                        const FinetuneConfig& cfg) {
    if (cfg.optim.epochs <= 0 || cfg.optim.batch <= 0) {
        throw ConfigError("finetune: epochs and batch must be positive");
    }
    if (train_manifest.records.empty()) throw DataError("finetune: empty training manifest");
    data::assert_no_leakage(train_manifest, test_manifest);
    std::filesystem::create_directories(cfg.out_dir);

    const auto classes = class_list(train_manifest);

    model::ModelConfig mc = cfg.model;
    mc.classifier.classes = static_cast<int>(classes.size());

    model::ModelState state = model::ModelState::init(mc, cfg.seed);
    if (!cfg.from_scratch) {
        if (!pretrain_ckpt) throw ConfigError("finetune: need a checkpoint unless from_scratch");
        LoadedCheckpoint loaded = load_checkpoint(*pretrain_ckpt);
        // Adopt every pretrained tensor that exists in the classify path;
        // the head stays freshly initialized.
        for (auto& p : state.params) {
            if (p.name.starts_with("cls.")) continue;
            if (!loaded.state.has(p.name)) {
                throw ConfigError("finetune: checkpoint lacks parameter '" + p.name +
                                  "' required by the model config");
            }
            const Parameter& src = loaded.state.find(p.name);
            if (src.value.shape != p.value.shape) {
                throw ConfigError("finetune: checkpoint shape mismatch for '" + p.name + "'");
            }
            p.value = src.value;
        }
    }

    const LabeledSet train_set = load_labeled(train_manifest, classes);
    const LabeledSet test_set = load_labeled(test_manifest, classes);

    MetricsLog metrics(cfg.out_dir / "metrics.jsonl");
    AdamConfig adam;
    adam.lr = cfg.optim.lr;
    const auto params = state.finetune_params(cfg.freeze_encoder);

    FinetuneResult result;
    result.classes = classes;
    int64_t step = 0;
    for (int epoch = 0; epoch < cfg.optim.epochs; ++epoch) {
        const auto order = shuffled_indices(train_set.images.size(),
                                            RngStream(cfg.seed).child(rng_tag::shuffle, epoch));
        double epoch_loss = 0.0;
        int epoch_batches = 0;
        for (size_t at = 0; at < order.size(); at += cfg.optim.batch) {
            const size_t batch_end = std::min(order.size(), at + cfg.optim.batch);
            const int batch_n = static_cast<int>(batch_end - at);

            Tape<float> tape;
            auto bound = model::bind_model(tape, state, true);
            Tape<float>::Ref total;
            for (size_t bi = at; bi < batch_end; ++bi) {
                const int si = order[bi];
                RngStream drop =
                    RngStream(cfg.seed).child(rng_tag::dropout, epoch, step).child(si);
                const auto logits =
                    model::classify_logits(bound, train_set.images[si], true, &drop);
                const auto loss = model::cross_entropy(tape, logits, train_set.labels[si]);
                total = total.valid() ? tape.add(total, loss) : loss;
            }
            total = tape.scale(total, 1.0 / batch_n);
            const double loss_value = tape.val(total).data[0];
            if (!std::isfinite(loss_value)) {
                throw NumericError("finetune: non-finite loss at step " + std::to_string(step));
            }
            tape.backward(total);
            model::harvest_grads(tape, bound);
            adam_step(params, adam, /*zero_grads=*/true);
            step += 1;
            epoch_loss += loss_value;
            ++epoch_batches;
        }

        const double train_acc = eval_accuracy(state, train_set);
        const double test_acc = eval_accuracy(state, test_set);
        result.final_train_acc = train_acc;
        result.final_test_acc = test_acc;

        nlohmann::json rec;
        rec["event"] = "finetune_epoch";
        rec["epoch"] = epoch;
        rec["step"] = step;
        rec["loss"] = epoch_loss / std::max(1, epoch_batches);
        rec["train_acc"] = train_acc;
        rec["test_acc"] = test_acc;
        rec["lr"] = adam.lr;
        metrics.append(std::move(rec));
    }

    nlohmann::json extra;
    extra["kind"] = "classifier";
    extra["classes"] = classes;
    extra["seed"] = cfg.seed;
    extra["from_scratch"] = cfg.from_scratch;
    extra["freeze_encoder"] = cfg.freeze_encoder;
    result.checkpoint = cfg.out_dir / "classifier.dmae";
    save_checkpoint(state, extra, result.checkpoint);
    return result;
}

}  // namespace denomae::train
