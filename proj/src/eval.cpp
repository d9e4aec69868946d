#include "denomae/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "denomae/checkpoint.hpp"
#include "denomae/errors.hpp"

namespace denomae::eval {

namespace {

void write_tsv(const std::filesystem::path& path, const std::vector<std::string>& comments,
               const std::string& header, const std::vector<std::string>& rows) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("cannot open for write: " + path.string());
    for (const auto& c : comments) f << "# " << c << "\n";
    f << header << "\n";
    for (const auto& r : rows) f << r << "\n";
    if (!f) throw IoError("write failed: " + path.string());
}

std::string fmt(double v, int digits = 6) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
    return buf;
}

}  // namespace

double tensor_mse(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) {
        throw ConfigError("tensor_mse: shape mismatch " + shape_str(a.shape) + " vs " +
                          shape_str(b.shape));
    }
    double acc = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i) {
        const double d = static_cast<double>(a.data[i]) - static_cast<double>(b.data[i]);
        acc += d * d;
    }
    return acc / static_cast<double>(a.numel());
}

std::vector<SweepRow> evaluate_snr_sweep(const std::filesystem::path& classifier_ckpt,
                                         const SweepConfig& cfg) {
    if (cfg.snrs.empty()) throw ConfigError("sweep: no SNRs given");
    if (cfg.samples_per_snr <= 0) throw ConfigError("sweep: empty per-SNR test set");
    std::filesystem::create_directories(cfg.out_dir);

    LoadedCheckpoint loaded = load_checkpoint(classifier_ckpt);
    if (loaded.extra.value("kind", "") != std::string("classifier")) {
        throw DataError("sweep: checkpoint is not a classifier");
    }
    const auto classes = loaded.extra.at("classes").get<std::vector<std::string>>();
    const int side = loaded.state.cfg.image_side;

    std::vector<SweepRow> rows;
    std::vector<std::string> tsv_rows;
    for (size_t si = 0; si < cfg.snrs.size(); ++si) {
        const double snr = cfg.snrs[si];
        data::GenConfig gen;
        gen.split = "sweep" + std::to_string(si);
        gen.samples = cfg.samples_per_snr;
        gen.schemes = cfg.schemes;
        gen.snr_min = snr;
        gen.snr_max = snr;
        gen.image_side = side;
        gen.seed = RngStream(cfg.seed).child(si).key();
        gen.decay = cfg.decay;
        gen.out_dir = cfg.out_dir / ("testset_snr" + std::to_string(si));
        const auto manifest = data::generate_dataset(gen);

        int correct = 0;
        for (const auto& rec : manifest.records) {
            const Tensor image = load_tensor(manifest.tensor_path(rec, "noisy_const"));
            Tape<float> tape;
            auto bound = model::bind_model(tape, loaded.state, false);
            const auto logits = model::classify_logits(bound, image, false, nullptr);
            const int pred = train::argmax_label(tape.val(logits));
            const auto it = std::find(classes.begin(), classes.end(), rec.label);
            if (it == classes.end()) {
                throw DataError("sweep: label '" + rec.label + "' outside classifier classes");
            }
            if (pred == static_cast<int>(it - classes.begin())) ++correct;
        }
        SweepRow row;
        row.snr_db = snr;
        row.n = cfg.samples_per_snr;
        row.accuracy = static_cast<double>(correct) / row.n;
        rows.push_back(row);
        tsv_rows.push_back(fmt(snr, 2) + "\t" + fmt(row.accuracy, 4) + "\t" +
                           std::to_string(row.n));
    }

    write_tsv(cfg.out_dir / "snr_sweep.tsv",
              {"full_scale_reference_accuracy: -10dB=0.7750 +10dB=0.8430"},
              "snr_db\taccuracy\tn_samples", tsv_rows);
    return rows;
}

std::vector<ExtrapRow> evaluate_extrapolation(const std::filesystem::path& pretrain_ckpt,
                                              const ExtrapConfig& cfg) {
    if (cfg.snrs.empty()) throw ConfigError("extrapolation: no SNRs given");
    if (cfg.samples <= 0) throw ConfigError("extrapolation: samples must be positive");
    for (double snr : cfg.snrs) {
        if (snr >= cfg.train_snr_min) {
            throw ConfigError("extrapolation: snr " + fmt(snr, 2) +
                              " is not below the training range (min " +
                              fmt(cfg.train_snr_min, 2) + ")");
        }
    }
    std::filesystem::create_directories(cfg.out_dir);

    LoadedCheckpoint loaded = load_checkpoint(pretrain_ckpt);
    model::ModelState& state = loaded.state;
    const model::ModelConfig& mc = state.cfg;
    if (mc.slot_of("clean_const") < 0) {
        throw DataError("extrapolation: checkpoint has no clean-constellation decoder");
    }
    const int side = mc.image_side;
    const int n_mod = mc.n_modalities();

    std::vector<ExtrapRow> rows;
    std::vector<std::string> tsv_rows;
    for (size_t si = 0; si < cfg.snrs.size(); ++si) {
        const double snr = cfg.snrs[si];
        ExtrapRow row;
        row.snr_db = snr;
        row.n = cfg.samples;
        int wins = 0;
        double mse_den = 0.0, mse_noisy = 0.0;

        for (int i = 0; i < cfg.samples; ++i) {
            RngStream rec_rng = RngStream(cfg.seed).child(rng_tag::sample_seed, si, i);
            const auto scheme = cfg.schemes[rec_rng.next_below(cfg.schemes.size())];
            const uint64_t sample_seed = rec_rng.next_u64();
            const auto sample = data::make_sample(scheme, snr, sample_seed, side, cfg.decay);

            model::DenoiseRequest req;
            req.inputs.assign(n_mod, nullptr);
            req.visibility.assign(n_mod, 1.0);
            req.seed = sample_seed;
            for (const auto& mod : cfg.visible) {
                const int slot = mc.slot_of(mod);
                if (slot < 0) continue;
                req.inputs[slot] = &sample.images[model::canonical_modality_index(mod)];
                req.visibility[slot] = 0.0;
            }
            const auto outputs = model::denoise(state, req);
            const Tensor& denoised = outputs[mc.slot_of("clean_const")];
            const Tensor& clean = sample.images[1];
            const Tensor& noisy = sample.images[0];

            const double md = tensor_mse(denoised, clean);
            const double mn = tensor_mse(noisy, clean);
            mse_den += md;
            mse_noisy += mn;
            if (md < mn) ++wins;

            if (i < cfg.triptychs) {
                const Tensor strip = render::hstack_images({noisy, denoised, clean});
                char name[64];
                std::snprintf(name, sizeof(name), "triptych_snr%+.0f_%02d.ppm", snr, i);
                render::write_ppm(strip, cfg.out_dir / name);
            }
        }
        row.mse_denoised = mse_den / cfg.samples;
        row.mse_noisy = mse_noisy / cfg.samples;
        row.win_fraction = static_cast<double>(wins) / cfg.samples;
        rows.push_back(row);
        tsv_rows.push_back(fmt(snr, 2) + "\t" + fmt(row.mse_denoised) + "\t" +
                           fmt(row.mse_noisy) + "\t" + fmt(row.win_fraction, 4) + "\t" +
                           std::to_string(row.n));
    }

    write_tsv(cfg.out_dir / "denoise.tsv", {},
              "snr_db\tmse_denoised\tmse_noisy\twin_fraction\tn_samples", tsv_rows);
    return rows;
}

const std::vector<std::vector<std::string>>& ablation_subsets() {
    static const std::vector<std::vector<std::string>> subsets = {
        {"clean_const"},
        {"noisy_const", "clean_const"},
        {"noisy_const", "clean_const", "clean_sig"},
        {"noisy_const", "clean_const", "noisy_sig", "clean_sig"},
        {"noisy_const", "clean_const", "noisy_sig", "clean_sig", "noise"},
    };
    return subsets;
}

std::vector<AblationRow> run_modality_ablation(const AblationConfig& cfg) {
    static const std::vector<double> kReference = {0.8130, 0.8190, 0.8320, 0.8330, 0.8350};
    std::filesystem::create_directories(cfg.out_dir);

    // One shared dataset trio; subsets differ only in which modalities the
    // pretraining loads.
    auto gen_with = [&](const std::string& split, int n, uint64_t seed_tag) {
        data::GenConfig gen;
        gen.split = split;
        gen.samples = n;
        gen.schemes = cfg.schemes;
        gen.snr_min = cfg.snr_min;
        gen.snr_max = cfg.snr_max;
        gen.image_side = cfg.model.image_side;
        gen.seed = RngStream(cfg.seed).child(seed_tag).key();
        gen.out_dir = cfg.out_dir / split;
        return data::generate_dataset(gen);
    };
    const auto pre_manifest = gen_with("ablate-pretrain", cfg.pretrain_samples, 1);
    const auto ft_manifest = gen_with("ablate-finetune", cfg.finetune_samples, 2);
    const auto test_manifest = gen_with("ablate-test", cfg.test_samples, 3);

    std::vector<AblationRow> rows;
    std::vector<std::string> tsv_rows;
    const auto& subsets = ablation_subsets();
    for (size_t k = 0; k < subsets.size(); ++k) {
        model::ModelConfig mc = cfg.model;
        mc.modalities = subsets[k];
        mc.modality_weights.clear();

        train::PretrainConfig pre;
        pre.model = mc;
        pre.optim = {cfg.pretrain_lr, cfg.pretrain_epochs, cfg.batch};
        pre.seed = cfg.seed;
        pre.out_dir = cfg.out_dir / ("subset" + std::to_string(k + 1) + "-pretrain");
        const auto pre_result = train::pretrain(pre_manifest, pre);

        train::FinetuneConfig ft;
        ft.model = mc;
        ft.optim = {cfg.finetune_lr, cfg.finetune_epochs, cfg.batch};
        ft.seed = cfg.seed;
        ft.out_dir = cfg.out_dir / ("subset" + std::to_string(k + 1) + "-finetune");
        const auto ft_result = train::finetune(ft_manifest, test_manifest,
                                               pre_result.checkpoint, ft);

        AblationRow row;
        row.modalities = subsets[k];
        row.accuracy = ft_result.final_test_acc;
        row.reference = kReference[k];
        rows.push_back(row);

        std::string mods;
        for (const auto& m : subsets[k]) {
            if (!mods.empty()) mods += ",";
            mods += m;
        }
        tsv_rows.push_back(std::to_string(subsets[k].size()) + "\t" + mods + "\t" +
                           fmt(row.accuracy, 4) + "\t" + fmt(row.reference, 4));
    }

    write_tsv(cfg.out_dir / "ablation.tsv",
              {"reference column: full-scale accuracies for the same nested subsets"},
              "n_modalities\tmodalities\ttest_accuracy\tfull_scale_reference", tsv_rows);
    return rows;
}

}  // namespace denomae::eval
