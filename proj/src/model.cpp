#include "denomae/model.hpp"

#include <algorithm>
#include <cmath>

#include "denomae/errors.hpp"

namespace denomae::model {

namespace {

uint64_t fnv1a(std::string_view s) {
    uint64_t h = 1469598103934665603ULL;
    for (char c : s) {
        h ^= static_cast<unsigned char>(c);
        h *= 1099511628211ULL;
    }
    return h;
}

}  // namespace

const std::vector<std::string>& all_modalities() {
    static const std::vector<std::string> mods = {"noisy_const", "clean_const", "noisy_sig",
                                                  "clean_sig", "noise"};
    return mods;
}

int canonical_modality_index(const std::string& name) {
    const auto& mods = all_modalities();
    for (size_t i = 0; i < mods.size(); ++i) {
        if (mods[i] == name) return static_cast<int>(i);
    }
    throw ConfigError("unknown modality '" + name + "'");
}

ModelConfig ModelConfig::paper_scale() {
    ModelConfig c;
    c.image_side = 224;
    c.patch = 16;
    c.d_model = 768;
    c.enc_layers = 12;
    c.dec_layers = 4;
    c.heads = 12;
    return c;
}

ModelConfig ModelConfig::desk_scale() {
    ModelConfig c;
    c.image_side = 32;
    c.patch = 8;
    c.d_model = 64;
    c.enc_layers = 2;
    c.dec_layers = 1;
    c.heads = 4;
    return c;
}

int ModelConfig::slot_of(const std::string& modality) const {
    for (size_t i = 0; i < modalities.size(); ++i) {
        if (modalities[i] == modality) return static_cast<int>(i);
    }
    return -1;
}

int ModelConfig::classify_slot() const {
    const int s = slot_of("noisy_const");
    return s >= 0 ? s : 0;
}

void ModelConfig::validate() const {
    if (modalities.empty()) throw ConfigError("model: at least one modality required");
    for (const auto& m : modalities) canonical_modality_index(m);
    for (size_t i = 0; i < modalities.size(); ++i) {
        for (size_t j = i + 1; j < modalities.size(); ++j) {
            if (modalities[i] == modalities[j]) {
                throw ConfigError("model: duplicate modality '" + modalities[i] + "'");
            }
        }
    }
    if (image_side <= 0 || patch <= 0 || image_side % patch != 0) {
        throw ConfigError("model: image_side must be a positive multiple of patch, got " +
                          std::to_string(image_side) + "/" + std::to_string(patch));
    }
    if (channels <= 0) throw ConfigError("model: channels must be positive");
    if (d_model <= 0 || heads <= 0 || d_model % heads != 0) {
        throw ConfigError("model: d_model must be a positive multiple of heads");
    }
    if (enc_layers < 1) throw ConfigError("model: enc_layers must be >= 1");
    if (dec_layers < 0) throw ConfigError("model: dec_layers must be >= 0");
    if (mlp_ratio < 1) throw ConfigError("model: mlp_ratio must be >= 1");
    if (!(mask_ratio > 0.0 && mask_ratio < 1.0)) {
        throw ConfigError("model: mask_ratio must be in (0,1), got " +
                          std::to_string(mask_ratio));
    }
    if (!modality_weights.empty()) {
        if (modality_weights.size() != modalities.size()) {
            throw ConfigError("model: modality_weights size mismatch");
        }
        for (double w : modality_weights) {
            if (!(w > 0.0)) throw ConfigError("model: modality weights must be > 0");
        }
    }
    if (classifier.hidden <= 0 || classifier.classes <= 0) {
        throw ConfigError("model: classifier sizes must be positive");
    }
    if (classifier.dropout < 0.0 || classifier.dropout >= 1.0) {
        throw ConfigError("model: classifier dropout must be in [0,1)");
    }
    if (n_patches() < 2) throw ConfigError("model: need at least 2 patches");
}

nlohmann::json ModelConfig::to_json() const {
    nlohmann::json j;
    j["modalities"] = modalities;
    j["image_side"] = image_side;
    j["channels"] = channels;
    j["patch"] = patch;
    j["d_model"] = d_model;
    j["enc_layers"] = enc_layers;
    j["dec_layers"] = dec_layers;
    j["heads"] = heads;
    j["mlp_ratio"] = mlp_ratio;
    j["mask_ratio"] = mask_ratio;
    j["modality_weights"] = modality_weights;
    j["shared_mask"] = shared_mask;
    j["classifier"] = {{"hidden", classifier.hidden},
                       {"dropout", classifier.dropout},
                       {"classes", classifier.classes}};
    return j;
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.modalities = j.at("modalities").get<std::vector<std::string>>();
    c.image_side = j.at("image_side").get<int>();
    c.channels = j.at("channels").get<int>();
    c.patch = j.at("patch").get<int>();
    c.d_model = j.at("d_model").get<int>();
    c.enc_layers = j.at("enc_layers").get<int>();
    c.dec_layers = j.at("dec_layers").get<int>();
    c.heads = j.at("heads").get<int>();
    c.mlp_ratio = j.at("mlp_ratio").get<int>();
    c.mask_ratio = j.at("mask_ratio").get<double>();
    c.modality_weights = j.at("modality_weights").get<std::vector<double>>();
    c.shared_mask = j.at("shared_mask").get<bool>();
    const auto& cls = j.at("classifier");
    c.classifier.hidden = cls.at("hidden").get<int>();
    c.classifier.dropout = cls.at("dropout").get<double>();
    c.classifier.classes = cls.at("classes").get<int>();
    c.validate();
    return c;
}

MaskPlan sample_mask(int n, double ratio, RngStream& rng) {
    if (n < 2) throw ConfigError("sample_mask: need at least 2 patches, got " + std::to_string(n));
    if (!(ratio > 0.0 && ratio < 1.0)) {
        throw ConfigError("sample_mask: ratio must be in (0,1), got " + std::to_string(ratio));
    }
    const int n_masked = static_cast<int>(std::floor(ratio * n));
    std::vector<int> idx(n);
    for (int i = 0; i < n; ++i) idx[i] = i;
    for (int i = 0; i < n_masked; ++i) {
        const int j = i + static_cast<int>(rng.next_below(static_cast<uint64_t>(n - i)));
        std::swap(idx[i], idx[j]);
    }
    MaskPlan plan;
    plan.total = n;
    plan.masked.assign(idx.begin(), idx.begin() + n_masked);
    plan.visible.assign(idx.begin() + n_masked, idx.end());
    std::sort(plan.masked.begin(), plan.masked.end());
    std::sort(plan.visible.begin(), plan.visible.end());
    return plan;
}

MaskPlan full_visible(int n) {
    MaskPlan plan;
    plan.total = n;
    plan.visible.resize(n);
    for (int i = 0; i < n; ++i) plan.visible[i] = i;
    return plan;
}

MaskPlan full_masked(int n) {
    MaskPlan plan;
    plan.total = n;
    plan.masked.resize(n);
    for (int i = 0; i < n; ++i) plan.masked[i] = i;
    return plan;
}

MaskPlan plan_for_ratio(int n, double ratio, RngStream& rng) {
    if (ratio <= 0.0) return full_visible(n);
    if (ratio >= 1.0) return full_masked(n);
    return sample_mask(n, ratio, rng);
}

Tensor patchify(const Tensor& image, int patch) {
    if (image.rank() != 3) {
        throw ConfigError("patchify: expected [C,H,W], got " + shape_str(image.shape));
    }
    const int ch = image.shape[0], h = image.shape[1], w = image.shape[2];
    if (h != w) throw ConfigError("patchify: image must be square, got " + shape_str(image.shape));
    if (patch <= 0 || h % patch != 0) {
        throw ConfigError("patchify: side " + std::to_string(h) + " not divisible by patch " +
                          std::to_string(patch));
    }
    const int per_side = h / patch;
    const int n = per_side * per_side;
    const int dim = ch * patch * patch;
    Tensor out({n, dim});
    for (int pr = 0; pr < per_side; ++pr) {
        for (int pc = 0; pc < per_side; ++pc) {
            const int row = pr * per_side + pc;
            for (int c = 0; c < ch; ++c) {
                for (int y = 0; y < patch; ++y) {
                    for (int x = 0; x < patch; ++x) {
                        out.at(row, (c * patch + y) * patch + x) =
                            image.data[(static_cast<int64_t>(c) * h + pr * patch + y) * w +
                                       pc * patch + x];
                    }
                }
            }
        }
    }
    return out;
}

Tensor unpatchify(const Tensor& patches, int channels, int side, int patch) {
    const int per_side = side / patch;
    const int n = per_side * per_side;
    const int dim = channels * patch * patch;
    if (patches.rank() != 2 || patches.shape[0] != n || patches.shape[1] != dim) {
        throw ConfigError("unpatchify: expected [" + std::to_string(n) + "," +
                          std::to_string(dim) + "], got " + shape_str(patches.shape));
    }
    Tensor out({channels, side, side});
    for (int pr = 0; pr < per_side; ++pr) {
        for (int pc = 0; pc < per_side; ++pc) {
            const int row = pr * per_side + pc;
            for (int c = 0; c < channels; ++c) {
                for (int y = 0; y < patch; ++y) {
                    for (int x = 0; x < patch; ++x) {
                        out.data[(static_cast<int64_t>(c) * side + pr * patch + y) * side +
                                 pc * patch + x] = patches.at(row, (c * patch + y) * patch + x);
                    }
                }
            }
        }
    }
    return out;
}

Tensor gather_patch_rows(const Tensor& patches, const std::vector<int>& rows) {
    const int dim = patches.cols();
    Tensor out({static_cast<int>(rows.size()), dim});
    for (size_t r = 0; r < rows.size(); ++r) {
        std::copy(patches.data.begin() + static_cast<size_t>(rows[r]) * dim,
                  patches.data.begin() + static_cast<size_t>(rows[r] + 1) * dim,
                  out.data.begin() + r * dim);
    }
    return out;
}

namespace {

void add_param(ModelState& s, const std::string& name, std::vector<int> shape) {
    s.index.emplace(name, static_cast<int>(s.params.size()));
    s.params.emplace_back(name, std::move(shape));
}

void init_trunc_normal(Parameter& p, uint64_t seed, double sigma = 0.02) {
    RngStream rng = RngStream(seed).child(rng_tag::weight_init, fnv1a(p.name));
    for (auto& v : p.value.data) v = static_cast<float>(rng.next_trunc_normal(sigma));
}

void init_ones(Parameter& p) {
    for (auto& v : p.value.data) v = 1.0f;
}

void add_block_params(ModelState& s, const std::string& prefix, int d, int mlp_ratio) {
    add_param(s, prefix + ".ln1.g", {d});
    add_param(s, prefix + ".ln1.b", {d});
    for (const char* n : {".attn.wq", ".attn.wk", ".attn.wv", ".attn.wo"}) {
        add_param(s, prefix + n, {d, d});
    }
    for (const char* n : {".attn.bq", ".attn.bk", ".attn.bv", ".attn.bo"}) {
        add_param(s, prefix + n, {d});
    }
    add_param(s, prefix + ".ln2.g", {d});
    add_param(s, prefix + ".ln2.b", {d});
    add_param(s, prefix + ".mlp.w1", {d, mlp_ratio * d});
    add_param(s, prefix + ".mlp.b1", {mlp_ratio * d});
    add_param(s, prefix + ".mlp.w2", {mlp_ratio * d, d});
    add_param(s, prefix + ".mlp.b2", {d});
}

bool is_gain(const std::string& name) {
    return name.ends_with(".g") && (name.find(".ln") != std::string::npos ||
                                    name.find(".norm") != std::string::npos);
}

bool is_bias(const std::string& name) {
    return name.ends_with(".b") || name.ends_with(".bq") || name.ends_with(".bk") ||
           name.ends_with(".bv") || name.ends_with(".bo") || name.ends_with(".b1") ||
           name.ends_with(".b2");
}

}  // namespace

ModelState ModelState::init(const ModelConfig& cfg, uint64_t seed) {
    cfg.validate();
    ModelState s;
    s.cfg = cfg;
    const int d = cfg.d_model;
    const int n = cfg.n_patches();
    const int pd = cfg.patch_dim();

    for (const auto& mod : cfg.modalities) {
        add_param(s, "embed." + mod + ".w", {pd, d});
        add_param(s, "embed." + mod + ".b", {d});
        add_param(s, "pos." + mod, {n, d});
        add_param(s, "modemb." + mod, {1, d});
    }
    for (int l = 0; l < cfg.enc_layers; ++l) {
        add_block_params(s, "enc." + std::to_string(l), d, cfg.mlp_ratio);
    }
    add_param(s, "enc.norm.g", {d});
    add_param(s, "enc.norm.b", {d});
    for (const auto& mod : cfg.modalities) {
        add_param(s, "shared." + mod + ".w", {d, d});
        add_param(s, "shared." + mod + ".b", {d});
        add_param(s, "shared." + mod + ".ln.g", {d});
        add_param(s, "shared." + mod + ".ln.b", {d});
    }
    add_param(s, "dec.mask_token", {1, d});
    for (int l = 0; l < cfg.dec_layers; ++l) {
        add_block_params(s, "dec." + std::to_string(l), d, cfg.mlp_ratio);
    }
    if (cfg.dec_layers > 0) {
        add_param(s, "dec.norm.g", {d});
        add_param(s, "dec.norm.b", {d});
    }
    for (const auto& mod : cfg.modalities) {
        add_param(s, "proj." + mod + ".w", {d, pd});
        add_param(s, "proj." + mod + ".b", {pd});
    }
    add_param(s, "cls.w1", {d, cfg.classifier.hidden});
    add_param(s, "cls.b1", {cfg.classifier.hidden});
    add_param(s, "cls.w2", {cfg.classifier.hidden, cfg.classifier.classes});
    add_param(s, "cls.b2", {cfg.classifier.classes});

    for (auto& p : s.params) {
        if (is_gain(p.name)) {
            init_ones(p);
        } else if (is_bias(p.name)) {
            // zeros by construction
        } else {
            init_trunc_normal(p, seed);
        }
    }
    return s;
}

Parameter& ModelState::find(const std::string& name) {
    const auto it = index.find(name);
    if (it == index.end()) throw ConfigError("model: no parameter '" + name + "'");
    return params[it->second];
}

const Parameter& ModelState::find(const std::string& name) const {
    const auto it = index.find(name);
    if (it == index.end()) throw ConfigError("model: no parameter '" + name + "'");
    return params[it->second];
}

std::vector<Parameter*> ModelState::all_params() {
    std::vector<Parameter*> out;
    out.reserve(params.size());
    for (auto& p : params) out.push_back(&p);
    return out;
}

std::vector<Parameter*> ModelState::pretrain_params() {
    std::vector<Parameter*> out;
    for (auto& p : params) {
        if (!p.name.starts_with("cls.")) out.push_back(&p);
    }
    return out;
}

std::vector<Parameter*> ModelState::classifier_params() {
    std::vector<Parameter*> out;
    for (auto& p : params) {
        if (p.name.starts_with("cls.")) out.push_back(&p);
    }
    return out;
}

std::vector<Parameter*> ModelState::finetune_params(bool freeze_encoder) {
    if (freeze_encoder) return classifier_params();
    const std::string mod = cfg.modalities.at(cfg.classify_slot());
    std::vector<Parameter*> out;
    for (auto& p : params) {
        const bool in_path = p.name.starts_with("cls.") || p.name.starts_with("enc.") ||
                             p.name == "pos." + mod || p.name == "modemb." + mod ||
                             p.name.starts_with("embed." + mod + ".");
        if (in_path) out.push_back(&p);
    }
    return out;
}

PretrainLossValue masked_mse_loss(const std::vector<Tensor>& preds,
                                  const std::vector<Tensor>& targets,
                                  const std::vector<MaskPlan>& plans,
                                  const std::vector<double>& weights, int patch) {
    if (preds.size() != targets.size() || preds.size() != plans.size()) {
        throw ConfigError("masked_mse_loss: modality count mismatch");
    }
    PretrainLossValue out;
    for (size_t m = 0; m < preds.size(); ++m) {
        if (plans[m].masked.empty()) {
            throw ConfigError("masked_mse_loss: empty masked set for modality " +
                              std::to_string(m));
        }
        const Tensor pp = patchify(preds[m], patch);
        const Tensor tp = patchify(targets[m], patch);
        // canonical index order: the loss is invariant to plan shuffling
        std::vector<int> masked = plans[m].masked;
        std::sort(masked.begin(), masked.end());
        double acc = 0.0;
        int64_t count = 0;
        for (int row : masked) {
            for (int c = 0; c < pp.cols(); ++c) {
                const double d =
                    static_cast<double>(pp.at(row, c)) - static_cast<double>(tp.at(row, c));
                acc += d * d;
                ++count;
            }
        }
        const double lm = acc / static_cast<double>(count);
        out.per_modality.push_back(lm);
        const double w = weights.empty() ? 1.0 : weights.at(m);
        out.total += w * lm;
    }
    return out;
}

void harvest_grads(Tape<float>& tape, BoundModel<float>& m) {
    for (size_t i = 0; i < m.refs.size(); ++i) {
        if (!tape.has_adj(m.refs[i])) continue;
        const auto& adj = tape.val_adj(m.refs[i]);
        auto& grad = m.state->params[i].grad;
        for (int64_t k = 0; k < grad.numel(); ++k) grad.data[k] += adj.data[k];
    }
}

std::vector<Tensor> denoise(ModelState& state, const DenoiseRequest& req) {
    const ModelConfig& cfg = state.cfg;
    const int n_mod = cfg.n_modalities();
    if (static_cast<int>(req.inputs.size()) != n_mod ||
        static_cast<int>(req.visibility.size()) != n_mod) {
        throw ConfigError("denoise: inputs/visibility must cover all configured modalities");
    }
    const int n = cfg.n_patches();
    RngStream rng = RngStream(req.seed).child(rng_tag::mask_plan);

    std::vector<MaskPlan> plans(n_mod);
    bool any_visible = false;
    for (int s = 0; s < n_mod; ++s) {
        double ratio = req.visibility[s];
        if (req.inputs[s] == nullptr) ratio = 1.0;
        if (ratio < 0.0 || ratio > 1.0) {
            throw ConfigError("denoise: visibility must be in [0,1]");
        }
        RngStream mod_rng = rng.child(s);
        plans[s] = plan_for_ratio(n, ratio, mod_rng);
        if (!plans[s].visible.empty()) any_visible = true;
    }
    if (!any_visible) throw ConfigError("denoise: all modalities fully masked");

    Tape<float> tape;
    auto m = bind_model(tape, state, false);
    std::vector<Tape<float>::Ref> z(n_mod);
    for (int s = 0; s < n_mod; ++s) {
        if (plans[s].visible.empty()) continue;
        const auto patches = tape.constant(patchify(*req.inputs[s], cfg.patch));
        const auto emb = embed_modality(m, patches, s);
        const auto visible = plans[s].visible.size() == static_cast<size_t>(n)
                                 ? emb
                                 : tape.gather_rows(emb, plans[s].visible);
        z[s] = project_to_shared(m, encode_tokens(m, visible), s);
    }
    const auto preds = decode_all(m, z, plans);

    std::vector<Tensor> out;
    out.reserve(n_mod);
    for (int s = 0; s < n_mod; ++s) {
        out.push_back(unpatchify(tape.val(preds[s]), cfg.channels, cfg.image_side, cfg.patch));
    }
    return out;
}

}  // namespace denomae::model
