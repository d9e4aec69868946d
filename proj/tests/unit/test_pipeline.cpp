#include <fstream>
#include <sstream>

#include "doctest.h"

#include "denomae/checkpoint.hpp"
#include "denomae/dataset.hpp"
#include "denomae/eval.hpp"
#include "denomae/train.hpp"

#include "test_util.hpp"

using namespace denomae;

namespace {

std::string file_bytes(const std::filesystem::path& p) {
    std::ifstream f(p, std::ios::binary);
    REQUIRE_MESSAGE(f.good(), "missing file: ", p.string());
    std::ostringstream os;
    os << f.rdbuf();
    return os.str();
}

model::ModelConfig pipeline_model() {
    model::ModelConfig c = model::ModelConfig::desk_scale();
    c.modalities = {"noisy_const", "clean_const"};
    c.classifier.hidden = 32;
    return c;
}

data::GenConfig small_gen(const std::filesystem::path& dir, const std::string& split, int n,
                          uint64_t seed) {
    data::GenConfig g;
    g.split = split;
    g.samples = n;
    g.seed = seed;
    g.out_dir = dir;
    return g;
}

}  // namespace

TEST_CASE("dataset generation is byte-identical across reruns and thread counts") {
    const auto root = testutil::scratch_dir("gen_det");
    auto a = small_gen(root / "a", "pretrain", 6, 7);
    auto b = small_gen(root / "b", "pretrain", 6, 7);
    a.threads = 1;
    b.threads = 2;
    const auto ma = data::generate_dataset(a);
    const auto mb = data::generate_dataset(b);

    CHECK(file_bytes(root / "a" / "manifest.jsonl") == file_bytes(root / "b" / "manifest.jsonl"));
    REQUIRE(ma.records.size() == 6);
    for (size_t i = 0; i < ma.records.size(); ++i) {
        for (const auto& [mod, rel] : ma.records[i].files) {
            CHECK(file_bytes(root / "a" / rel) == file_bytes(root / "b" / rel));
        }
        CHECK(ma.records[i].snr_db >= -10.0);
        CHECK(ma.records[i].snr_db <= 10.0);
    }
}

TEST_CASE("gen config rejects degenerate requests") {
    auto g = small_gen("unused", "pretrain", 0, 1);
    CHECK_THROWS_AS(data::generate_dataset(g), ConfigError);
    g = small_gen("unused", "pretrain", 4, 1);
    g.snr_min = 5.0;
    g.snr_max = -5.0;
    CHECK_THROWS_AS(g.validate(), ConfigError);
}

TEST_CASE("manifest load validates files and duplicate ids") {
    const auto root = testutil::scratch_dir("manifest_bad");
    const auto m = data::generate_dataset(small_gen(root / "d", "pretrain", 3, 5));

    SUBCASE("missing tensor file") {
        std::filesystem::remove(root / "d" / m.records[1].files.at("noise"));
        CHECK_THROWS_AS(data::DatasetManifest::load(root / "d" / "manifest.jsonl"), DataError);
    }
    SUBCASE("duplicate sample id") {
        auto copy = m;
        copy.records.push_back(copy.records[0]);
        copy.save(root / "d" / "manifest.jsonl");
        CHECK_THROWS_AS(data::DatasetManifest::load(root / "d" / "manifest.jsonl"), DataError);
    }
}

TEST_CASE("leakage guard trips on shared ids or seeds") {
    const auto root = testutil::scratch_dir("leakage");
    const auto train = data::generate_dataset(small_gen(root / "tr", "finetune-train", 3, 11));
    const auto test = data::generate_dataset(small_gen(root / "te", "finetune-test", 3, 12));
    CHECK_NOTHROW(data::assert_no_leakage(train, test));

    auto tampered = test;
    tampered.records[0].seed = train.records[0].seed;
    CHECK_THROWS_AS(data::assert_no_leakage(train, tampered), DataError);
    tampered = test;
    tampered.records[0].sample_id = train.records[0].sample_id;
    CHECK_THROWS_AS(data::assert_no_leakage(train, tampered), DataError);
}

TEST_CASE("checkpoint: round-trip is byte identical, corruption detected") {
    const auto root = testutil::scratch_dir("ckpt");
    model::ModelState state = model::ModelState::init(pipeline_model(), 3);
    nlohmann::json extra;
    extra["kind"] = "pretrain";
    extra["epoch"] = 0;

    const auto p1 = root / "a.dmae";
    const auto p2 = root / "b.dmae";
    save_checkpoint(state, extra, p1);
    LoadedCheckpoint loaded = load_checkpoint(p1);
    save_checkpoint(loaded.state, loaded.extra, p2);
    CHECK(file_bytes(p1) == file_bytes(p2));

    // verify values survive
    for (size_t i = 0; i < state.params.size(); ++i) {
        CHECK(loaded.state.params[i].value.data == state.params[i].value.data);
    }

    // flip one payload byte -> checksum failure
    std::string bytes = file_bytes(p1);
    bytes[bytes.size() - 3] = static_cast<char>(bytes[bytes.size() - 3] ^ 0x40);
    std::ofstream(root / "corrupt.dmae", std::ios::binary) << bytes;
    CHECK_THROWS_AS(load_checkpoint(root / "corrupt.dmae"), DataError);
}

TEST_CASE("pretrain: one epoch makes ceil(K/B) steps and logs metrics") {
    const auto root = testutil::scratch_dir("pretrain_steps");
    const auto manifest = data::generate_dataset(small_gen(root / "d", "pretrain", 5, 21));

    train::PretrainConfig cfg;
    cfg.model = pipeline_model();
    cfg.optim = {1e-3, 1, 2};
    cfg.seed = 2;
    cfg.out_dir = root / "run";
    const auto result = train::pretrain(manifest, cfg);
    CHECK(result.steps == 3);  // ceil(5/2)
    CHECK(std::filesystem::exists(result.checkpoint));
    CHECK(result.step1_loss > 0.0);

    int step_lines = 0;
    std::ifstream f(root / "run" / "metrics.jsonl");
    std::string line;
    while (std::getline(f, line)) {
        if (line.find("pretrain_step") != std::string::npos) ++step_lines;
    }
    CHECK(step_lines == 3);
}

TEST_CASE("pretrain resume reproduces the uninterrupted run bitwise") {
    const auto root = testutil::scratch_dir("resume");
    const auto manifest = data::generate_dataset(small_gen(root / "d", "pretrain", 4, 31));

    train::PretrainConfig cfg;
    cfg.model = pipeline_model();
    cfg.optim = {1e-3, 2, 2};
    cfg.seed = 9;
    cfg.ckpt_every = 1;
    cfg.out_dir = root / "full";
    const auto full = train::pretrain(manifest, cfg);

    train::PretrainConfig resumed_cfg = cfg;
    resumed_cfg.out_dir = root / "resumed";
    const auto resumed =
        train::pretrain(manifest, resumed_cfg, root / "full" / "checkpoint_epoch1.dmae");
    CHECK(file_bytes(full.checkpoint) == file_bytes(resumed.checkpoint));
}

TEST_CASE("pretrain rejects mismatched resume config") {
    const auto root = testutil::scratch_dir("resume_bad");
    const auto manifest = data::generate_dataset(small_gen(root / "d", "pretrain", 2, 3));
    train::PretrainConfig cfg;
    cfg.model = pipeline_model();
    cfg.optim = {1e-3, 1, 2};
    cfg.out_dir = root / "a";
    const auto r = train::pretrain(manifest, cfg);

    train::PretrainConfig other = cfg;
    other.model.d_model = 32;
    other.out_dir = root / "b";
    CHECK_THROWS_AS(train::pretrain(manifest, other, r.checkpoint), ConfigError);
}

TEST_CASE("pretrain aborts on numeric blowup and logs the batch seeds") {
    const auto root = testutil::scratch_dir("nan_abort");
    const auto manifest = data::generate_dataset(small_gen(root / "d", "pretrain", 4, 41));

    train::PretrainConfig cfg;
    cfg.model = pipeline_model();
    cfg.optim = {1e25, 3, 2};  // guaranteed overflow after the first update
    cfg.out_dir = root / "run";
    CHECK_THROWS_WITH_AS(train::pretrain(manifest, cfg),
                         doctest::Contains("offending batch seeds"), NumericError);

    const std::string metrics = file_bytes(root / "run" / "metrics.jsonl");
    CHECK(metrics.find("nan_abort") != std::string::npos);
    CHECK(metrics.find("batch_seeds") != std::string::npos);
}

TEST_CASE("finetune: degenerate single-class test set scores 100%") {
    const auto root = testutil::scratch_dir("finetune_degenerate");
    auto gtrain = small_gen(root / "tr", "finetune-train", 4, 51);
    auto gtest = small_gen(root / "te", "finetune-test", 4, 52);
    gtrain.schemes = {sig::Scheme::bpsk};
    gtest.schemes = {sig::Scheme::bpsk};
    const auto train_m = data::generate_dataset(gtrain);
    const auto test_m = data::generate_dataset(gtest);

    train::FinetuneConfig cfg;
    cfg.model = pipeline_model();
    cfg.optim = {1e-3, 1, 2};
    cfg.from_scratch = true;
    cfg.out_dir = root / "run";
    const auto result = train::finetune(train_m, test_m, std::nullopt, cfg);
    CHECK(result.final_test_acc == 1.0);
    CHECK(result.classes == std::vector<std::string>{"bpsk"});
    CHECK(std::filesystem::exists(result.checkpoint));
}

TEST_CASE("finetune rejects labels outside the training classes") {
    const auto root = testutil::scratch_dir("finetune_labels");
    auto gtrain = small_gen(root / "tr", "finetune-train", 3, 61);
    auto gtest = small_gen(root / "te", "finetune-test", 3, 62);
    gtrain.schemes = {sig::Scheme::bpsk};
    gtest.schemes = {sig::Scheme::qpsk};
    const auto train_m = data::generate_dataset(gtrain);
    const auto test_m = data::generate_dataset(gtest);

    train::FinetuneConfig cfg;
    cfg.model = pipeline_model();
    cfg.optim = {1e-3, 1, 2};
    cfg.from_scratch = true;
    cfg.out_dir = root / "run";
    CHECK_THROWS_AS(train::finetune(train_m, test_m, std::nullopt, cfg), DataError);
}

TEST_CASE("finetune restores pretrained tensors and keeps protocol parity") {
    const auto root = testutil::scratch_dir("finetune_restore");
    const auto pre_m = data::generate_dataset(small_gen(root / "pre", "pretrain", 4, 71));
    auto gtrain = small_gen(root / "tr", "finetune-train", 4, 72);
    auto gtest = small_gen(root / "te", "finetune-test", 4, 73);
    gtrain.schemes = {sig::Scheme::bpsk, sig::Scheme::qam16};
    gtest.schemes = {sig::Scheme::bpsk, sig::Scheme::qam16};
    const auto train_m = data::generate_dataset(gtrain);
    const auto test_m = data::generate_dataset(gtest);

    train::PretrainConfig pre;
    pre.model = pipeline_model();
    pre.optim = {1e-3, 1, 2};
    pre.out_dir = root / "prerun";
    const auto pre_result = train::pretrain(pre_m, pre);

    train::FinetuneConfig cfg;
    cfg.model = pipeline_model();
    cfg.optim = {1e-3, 1, 2};
    cfg.out_dir = root / "run";
    const auto tuned = train::finetune(train_m, test_m, pre_result.checkpoint, cfg);
    CHECK(tuned.classes.size() == 2);

    // freeze_encoder leaves encoder tensors untouched
    train::FinetuneConfig frozen = cfg;
    frozen.freeze_encoder = true;
    frozen.out_dir = root / "frozen";
    const auto frozen_result = train::finetune(train_m, test_m, pre_result.checkpoint, frozen);
    const auto pre_state = load_checkpoint(pre_result.checkpoint);
    const auto frozen_state = load_checkpoint(frozen_result.checkpoint);
    const auto& w_before = pre_state.state.find("enc.0.attn.wq").value;
    const auto& w_after = frozen_state.state.find("enc.0.attn.wq").value;
    CHECK(w_before.data == w_after.data);
}

TEST_CASE("extrapolation rejects snrs inside the training range") {
    eval::ExtrapConfig cfg;
    cfg.snrs = {-5.0};
    cfg.train_snr_min = -10.0;
    cfg.out_dir = testutil::scratch_dir("extrap_bad");
    CHECK_THROWS_AS(eval::evaluate_extrapolation("nonexistent.dmae", cfg), ConfigError);
}

TEST_CASE("identity denoiser baseline: equal tensors give equal mse") {
    RngStream rng(5);
    const Tensor noisy = testutil::random_tensor<float>({3, 8, 8}, rng);
    const Tensor clean = testutil::random_tensor<float>({3, 8, 8}, rng);
    CHECK(eval::tensor_mse(noisy, clean) == eval::tensor_mse(noisy, clean));
    CHECK(eval::tensor_mse(clean, clean) == 0.0);
}

TEST_CASE("desk presets carry the documented sizes") {
    const auto desk = model::ModelConfig::desk_scale();
    CHECK(desk.image_side == 32);
    CHECK(desk.patch == 8);
    CHECK(desk.d_model == 64);
    CHECK(desk.enc_layers == 2);
    CHECK(desk.dec_layers == 1);
    CHECK(desk.heads == 4);
    CHECK(desk.mask_ratio == 0.75);

    const auto paper = model::ModelConfig::paper_scale();
    CHECK(paper.image_side == 224);
    CHECK(paper.patch == 16);
    CHECK(paper.d_model == 768);
    CHECK(paper.enc_layers == 12);
    CHECK(paper.dec_layers == 4);
    CHECK(paper.heads == 12);
    CHECK(paper.classifier.hidden == 512);
    CHECK(paper.classifier.dropout == 0.5);

    const data::GenConfig gen;
    CHECK(gen.samples == 512);
    CHECK(gen.snr_min == -10.0);
    CHECK(gen.snr_max == 10.0);
}
