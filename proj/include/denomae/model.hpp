#pragma once

#include <algorithm>

#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "denomae/param.hpp"
#include "denomae/rng.hpp"
#include "denomae/tape.hpp"
#include "denomae/tensor.hpp"

#include "json.hpp"

namespace denomae::model {

// Canonical modality order: noisy/clean constellation, noisy/clean signal
// trace, noise trace.
const std::vector<std::string>& all_modalities();
int canonical_modality_index(const std::string& name);  // ConfigError on unknown

struct ClassifierConfig {
    int hidden = 512;
    double dropout = 0.5;
    int classes = 10;
};

struct ModelConfig {
    std::vector<std::string> modalities = all_modalities();
    int image_side = 224;
    int channels = 3;
    int patch = 16;
    int d_model = 768;
    int enc_layers = 12;
    int dec_layers = 4;
    int heads = 12;
    int mlp_ratio = 4;
    double mask_ratio = 0.75;
    std::vector<double> modality_weights;  // empty -> all ones
    bool shared_mask = false;
    ClassifierConfig classifier;

    static ModelConfig paper_scale();
    static ModelConfig desk_scale();

    int n_modalities() const { return static_cast<int>(modalities.size()); }
    int patches_per_side() const { return image_side / patch; }
    int n_patches() const { return patches_per_side() * patches_per_side(); }
    int patch_dim() const { return channels * patch * patch; }
    double weight_of(int slot) const {
        return modality_weights.empty() ? 1.0 : modality_weights.at(slot);
    }
    int slot_of(const std::string& modality) const;  // -1 when absent
    // Slot whose embedder consumes classifier inputs: the noisy
    // constellation when pretrained with it, otherwise slot 0.
    int classify_slot() const;

    void validate() const;
    nlohmann::json to_json() const;
    static ModelConfig from_json(const nlohmann::json& j);
};

// Disjoint, exhaustive split of patch indices into visible and masked,
// both sorted ascending.
struct MaskPlan {
    int total = 0;
    std::vector<int> visible;
    std::vector<int> masked;
};

// Uniform subset without replacement; |masked| = floor(ratio * n).
MaskPlan sample_mask(int n, double ratio, RngStream& rng);
MaskPlan full_visible(int n);
MaskPlan full_masked(int n);
// ratio 0 -> fully visible, 1 -> fully masked, otherwise sample_mask.
MaskPlan plan_for_ratio(int n, double ratio, RngStream& rng);

// [C,H,W] -> [N, C*p*p], row-major over the patch grid; exact inverse below.
Tensor patchify(const Tensor& image, int patch);
Tensor unpatchify(const Tensor& patches, int channels, int side, int patch);
// Rows of patchify(target) selected by index, used for loss targets.
Tensor gather_patch_rows(const Tensor& patches, const std::vector<int>& rows);

// All learnable tensors, addressed by role-derived names ("enc.0.attn.wq",
// "embed.noisy_const.w", ...). Encoder tensors are shared across modalities
// by construction: there is exactly one set of "enc.*" parameters.
struct ModelState {
    ModelConfig cfg;
    std::vector<Parameter> params;
    std::unordered_map<std::string, int> index;

    static ModelState init(const ModelConfig& cfg, uint64_t seed);

    Parameter& find(const std::string& name);
    const Parameter& find(const std::string& name) const;
    bool has(const std::string& name) const { return index.count(name) > 0; }

    std::vector<Parameter*> all_params();
    // Everything the pretraining objective touches (no classifier head).
    std::vector<Parameter*> pretrain_params();
    // Encoder, the classify-slot embedder, and the head; or head only.
    std::vector<Parameter*> finetune_params(bool freeze_encoder);
    std::vector<Parameter*> classifier_params();
};

// Parameters leased onto a tape. The same bound set serves every modality,
// so encoder weight sharing is by object identity.
template <typename T>
struct BoundModel {
    const ModelConfig* cfg = nullptr;
    ModelState* state = nullptr;
    Tape<T>* tape = nullptr;
    std::vector<typename Tape<T>::Ref> refs;

    typename Tape<T>::Ref of(const std::string& name) const {
        const auto it = state->index.find(name);
        if (it == state->index.end()) throw ConfigError("model: no parameter '" + name + "'");
        return refs[it->second];
    }
};

template <typename T>
BoundModel<T> bind_model(Tape<T>& tape, ModelState& state, bool needs_grad) {
    BoundModel<T> m;
    m.cfg = &state.cfg;
    m.state = &state;
    m.tape = &tape;
    m.refs.reserve(state.params.size());
    for (const Parameter& p : state.params) {
        m.refs.push_back(tape.leaf(cast_tensor<T>(p.value), needs_grad));
    }
    return m;
}

// Like bind_model but with externally created leaves (gradient checking).
template <typename T>
BoundModel<T> bind_model_refs(Tape<T>& tape, ModelState& state,
                              const std::vector<typename Tape<T>::Ref>& refs) {
    if (refs.size() != state.params.size()) {
        throw ConfigError("bind_model_refs: expected " + std::to_string(state.params.size()) +
                          " refs, got " + std::to_string(refs.size()));
    }
    BoundModel<T> m;
    m.cfg = &state.cfg;
    m.state = &state;
    m.tape = &tape;
    m.refs = refs;
    return m;
}

// Accumulates tape adjoints into Parameter::grad after backward().
void harvest_grads(Tape<float>& tape, BoundModel<float>& m);

// ---- forward pieces ----

template <typename T>
using Ref = typename Tape<T>::Ref;

template <typename T>
Ref<T> linear(BoundModel<T>& m, Ref<T> x, const std::string& w, const std::string& b) {
    return m.tape->add_rowvec(m.tape->matmul(x, m.of(w)), m.of(b));
}

template <typename T>
Ref<T> self_attention(BoundModel<T>& m, Ref<T> x, const std::string& prefix) {
    auto& t = *m.tape;
    const int d = m.cfg->d_model;
    const int heads = m.cfg->heads;
    const int dh = d / heads;
    const auto q = linear(m, x, prefix + ".wq", prefix + ".bq");
    const auto k = linear(m, x, prefix + ".wk", prefix + ".bk");
    const auto v = linear(m, x, prefix + ".wv", prefix + ".bv");
    std::vector<Ref<T>> outs;
    outs.reserve(heads);
    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
    for (int h = 0; h < heads; ++h) {
        const auto qh = t.slice_cols(q, h * dh, (h + 1) * dh);
        const auto kh = t.slice_cols(k, h * dh, (h + 1) * dh);
        const auto vh = t.slice_cols(v, h * dh, (h + 1) * dh);
        const auto scores = t.scale(t.matmul(qh, t.transpose(kh)), inv_sqrt_dh);
        outs.push_back(t.matmul(t.softmax(scores), vh));
    }
    return linear(m, t.concat_cols(outs), prefix + ".wo", prefix + ".bo");
}

// Pre-norm block: x + attn(LN(x)), then x + mlp(LN(x)).
template <typename T>
Ref<T> transformer_block(BoundModel<T>& m, Ref<T> x, const std::string& prefix) {
    auto& t = *m.tape;
    const auto a =
        self_attention(m, t.layer_norm(x, m.of(prefix + ".ln1.g"), m.of(prefix + ".ln1.b")),
                       prefix + ".attn");
    x = t.add(x, a);
    const auto h = t.layer_norm(x, m.of(prefix + ".ln2.g"), m.of(prefix + ".ln2.b"));
    const auto mlp = linear(m, t.gelu(linear(m, h, prefix + ".mlp.w1", prefix + ".mlp.b1")),
                            prefix + ".mlp.w2", prefix + ".mlp.b2");
    return t.add(x, mlp);
}

// Patch rows -> D-dim tokens with positional and modality embeddings.
template <typename T>
Ref<T> embed_modality(BoundModel<T>& m, Ref<T> patch_rows, int slot) {
    if (slot < 0 || slot >= m.cfg->n_modalities()) {
        throw ConfigError("embed_modality: slot " + std::to_string(slot) +
                          " outside configured modalities");
    }
    auto& t = *m.tape;
    const std::string& mod = m.cfg->modalities[slot];
    auto x = linear(m, patch_rows, "embed." + mod + ".w", "embed." + mod + ".b");
    x = t.add(x, m.of("pos." + mod));
    return t.add_rowvec(x, m.of("modemb." + mod));
}

// Shared encoder over (a subset of) tokens, with final norm.
template <typename T>
Ref<T> encode_tokens(BoundModel<T>& m, Ref<T> tokens) {
    if (m.tape->val(tokens).rows() < 1) throw ConfigError("encode: empty visible set");
    auto x = tokens;
    for (int l = 0; l < m.cfg->enc_layers; ++l) {
        x = transformer_block(m, x, "enc." + std::to_string(l));
    }
    return m.tape->layer_norm(x, m.of("enc.norm.g"), m.of("enc.norm.b"));
}

// Z_m: per-modality linear map into the shared latent space plus LN.
template <typename T>
Ref<T> project_to_shared(BoundModel<T>& m, Ref<T> encoded, int slot) {
    const std::string& mod = m.cfg->modalities.at(slot);
    auto& t = *m.tape;
    const auto z = linear(m, encoded, "shared." + mod + ".w", "shared." + mod + ".b");
    return t.layer_norm(z, m.of("shared." + mod + ".ln.g"), m.of("shared." + mod + ".ln.b"));
}

// Joint decoder. Per modality, visible positions carry shared-latent tokens
// and masked positions carry the learned mask token plus positional and
// modality embeddings; the concatenated n*N sequence runs through the
// decoder blocks and per-modality output projections.
template <typename T>
std::vector<Ref<T>> decode_all(BoundModel<T>& m, const std::vector<Ref<T>>& z_per_slot,
                               const std::vector<MaskPlan>& plans) {
    auto& t = *m.tape;
    const int n_mod = m.cfg->n_modalities();
    if (static_cast<int>(plans.size()) != n_mod ||
        static_cast<int>(z_per_slot.size()) != n_mod) {
        throw ConfigError("decode_all: modality count mismatch with config");
    }
    const int n_patches = m.cfg->n_patches();

    std::vector<Ref<T>> sequences;
    sequences.reserve(n_mod);
    for (int s = 0; s < n_mod; ++s) {
        const MaskPlan& plan = plans[s];
        if (plan.total != n_patches ||
            static_cast<int>(plan.visible.size() + plan.masked.size()) != n_patches) {
            throw ConfigError("decode_all: mask plan does not cover the patch grid");
        }
        const std::string& mod = m.cfg->modalities[s];
        const int n_vis = static_cast<int>(plan.visible.size());
        const int n_mask = static_cast<int>(plan.masked.size());
        if (n_vis > 0 && (!z_per_slot[s].valid() || t.val(z_per_slot[s]).rows() != n_vis)) {
            throw ConfigError("decode_all: latent token count disagrees with plan for " + mod);
        }

        std::vector<Ref<T>> parts;
        if (n_vis > 0) parts.push_back(z_per_slot[s]);
        if (n_mask > 0) {
            auto mask_tokens = t.tile_rows(m.of("dec.mask_token"), n_mask);
            mask_tokens = t.add(mask_tokens, t.gather_rows(m.of("pos." + mod), plan.masked));
            mask_tokens = t.add_rowvec(mask_tokens, m.of("modemb." + mod));
            parts.push_back(mask_tokens);
        }
        const auto stacked = parts.size() == 1 ? parts[0] : t.concat_rows(parts);

        // Restore patch order: position -> row in [visible; masked].
        std::vector<int> order(n_patches, -1);
        for (int i = 0; i < n_vis; ++i) order[plan.visible[i]] = i;
        for (int i = 0; i < n_mask; ++i) order[plan.masked[i]] = n_vis + i;
        sequences.push_back(t.gather_rows(stacked, order));
    }

    auto joint = n_mod == 1 ? sequences[0] : t.concat_rows(sequences);
    for (int l = 0; l < m.cfg->dec_layers; ++l) {
        joint = transformer_block(m, joint, "dec." + std::to_string(l));
    }
    if (m.cfg->dec_layers > 0) {
        joint = t.layer_norm(joint, m.of("dec.norm.g"), m.of("dec.norm.b"));
    }

    std::vector<Ref<T>> preds;
    preds.reserve(n_mod);
    for (int s = 0; s < n_mod; ++s) {
        const std::string& mod = m.cfg->modalities[s];
        const auto part = t.slice_rows(joint, s * n_patches, (s + 1) * n_patches);
        preds.push_back(linear(m, part, "proj." + mod + ".w", "proj." + mod + ".b"));
    }
    return preds;
}

template <typename T>
struct PretrainLossRefs {
    Ref<T> total;
    std::vector<Ref<T>> per_modality;
};

// Masked multi-modal reconstruction loss for one sample: per modality the
// MSE over masked patch pixels, combined as sum of w_m * L_m.
template <typename T>
PretrainLossRefs<T> pretrain_loss_forward(BoundModel<T>& m, const std::vector<Tensor>& images,
                                          const std::vector<MaskPlan>& plans) {
    auto& t = *m.tape;
    const int n_mod = m.cfg->n_modalities();
    if (static_cast<int>(images.size()) != n_mod) {
        throw ConfigError("pretrain_loss: expected " + std::to_string(n_mod) + " images");
    }

    std::vector<Ref<T>> z(n_mod);
    std::vector<Tensor> patch_targets(n_mod);
    for (int s = 0; s < n_mod; ++s) {
        patch_targets[s] = patchify(images[s], m.cfg->patch);
        if (plans[s].masked.empty()) {
            throw ConfigError("pretrain_loss: empty masked set for modality " +
                              m.cfg->modalities[s]);
        }
        const auto patches = t.constant(cast_tensor<T>(patch_targets[s]));
        const auto emb = embed_modality(m, patches, s);
        const auto visible = t.gather_rows(emb, plans[s].visible);
        z[s] = project_to_shared(m, encode_tokens(m, visible), s);
    }

    const auto preds = decode_all(m, z, plans);

    PretrainLossRefs<T> out;
    for (int s = 0; s < n_mod; ++s) {
        // canonical index order keeps the loss invariant to plan shuffling
        std::vector<int> masked = plans[s].masked;
        std::sort(masked.begin(), masked.end());
        const auto pred_masked = t.gather_rows(preds[s], masked);
        const auto target =
            t.constant(cast_tensor<T>(gather_patch_rows(patch_targets[s], masked)));
        const auto diff = t.sub(pred_masked, target);
        out.per_modality.push_back(t.mean_all(t.mul(diff, diff)));
    }
    Ref<T> total = t.scale(out.per_modality[0], m.cfg->weight_of(0));
    for (int s = 1; s < n_mod; ++s) {
        total = t.add(total, t.scale(out.per_modality[s], m.cfg->weight_of(s)));
    }
    out.total = total;
    return out;
}

struct PretrainLossValue {
    double total = 0.0;
    std::vector<double> per_modality;
};

// Reference-path masked loss on plain tensors (64-bit accumulation):
// L_m = mean over masked patch pixels of (pred - target)^2, total = sum of
// w_m * L_m. The tape path above must agree with this within float noise.
PretrainLossValue masked_mse_loss(const std::vector<Tensor>& preds,
                                  const std::vector<Tensor>& targets,
                                  const std::vector<MaskPlan>& plans,
                                  const std::vector<double>& weights, int patch);

// Encoder + token mean + two-layer head. Dropout is active only in train
// mode; eval is the identity, so eval passes are deterministic.
template <typename T>
Ref<T> classify_logits(BoundModel<T>& m, const Tensor& image, bool train,
                       RngStream* dropout_rng) {
    auto& t = *m.tape;
    const int slot = m.cfg->classify_slot();
    const auto patches = t.constant(cast_tensor<T>(patchify(image, m.cfg->patch)));
    const auto encoded = encode_tokens(m, embed_modality(m, patches, slot));
    const auto pooled = t.mean_rows(encoded);
    auto h = t.gelu(linear(m, pooled, "cls.w1", "cls.b1"));
    if (train) {
        if (dropout_rng == nullptr) throw ConfigError("classify: train mode needs a dropout rng");
        h = t.dropout(h, m.cfg->classifier.dropout, *dropout_rng, true);
    }
    return linear(m, h, "cls.w2", "cls.b2");
}

// -log softmax(logits)[label].
template <typename T>
Ref<T> cross_entropy(Tape<T>& t, Ref<T> logits, int label) {
    const auto& shape = t.val(logits).shape;
    if (shape.size() != 2 || shape[0] != 1 || label < 0 || label >= shape[1]) {
        throw DataError("cross_entropy: label " + std::to_string(label) +
                        " outside logits " + shape_str(shape));
    }
    return t.scale(t.pick(t.log_softmax(logits), 0, label), -1.0);
}

// Reconstruction with explicit per-modality visibility. Inputs may omit
// modalities entirely; those are represented purely by mask tokens.
struct DenoiseRequest {
    // Per configured slot; nullptr means the modality is absent.
    std::vector<const Tensor*> inputs;
    // Per configured slot; mask ratio in [0,1]. Absent slots are forced to 1.
    std::vector<double> visibility;
    uint64_t seed = 0;
};

std::vector<Tensor> denoise(ModelState& state, const DenoiseRequest& req);

}  // namespace denomae::model
