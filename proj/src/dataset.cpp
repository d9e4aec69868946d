#include "denomae/dataset.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <mutex>
#include <set>
#include <thread>

#include "denomae/errors.hpp"
#include "denomae/model.hpp"
#include "denomae/rng.hpp"

#include "json.hpp"

namespace denomae::data {

namespace {

uint64_t fnv1a(std::string_view s) {
    uint64_t h = 1469598103934665603ULL;
    for (char c : s) {
        h ^= static_cast<unsigned char>(c);
        h *= 1099511628211ULL;
    }
    return h;
}

std::string sample_id_for(const std::string& split, int i) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%06d", i);
    return split + "-" + buf;
}

nlohmann::json record_to_json(const ManifestRecord& rec) {
    nlohmann::json j;
    j["sample_id"] = rec.sample_id;
    j["label"] = rec.label;
    j["snr_db"] = rec.snr_db;
    j["seed"] = rec.seed;
    j["files"] = rec.files;
    return j;
}

ManifestRecord record_from_json(const nlohmann::json& j) {
    ManifestRecord rec;
    rec.sample_id = j.at("sample_id").get<std::string>();
    rec.label = j.at("label").get<std::string>();
    rec.snr_db = j.at("snr_db").get<double>();
    rec.seed = j.at("seed").get<uint64_t>();
    rec.files = j.at("files").get<std::map<std::string, std::string>>();
    return rec;
}

}  // namespace

void GenConfig::validate() const {
    if (samples <= 0) throw ConfigError("gen: samples must be positive");
    if (schemes.empty()) throw ConfigError("gen: scheme list is empty");
    if (snr_min > snr_max) throw ConfigError("gen: snr_min exceeds snr_max");
    if (image_side < 32) throw ConfigError("gen: image side must be >= 32");
    if (split.empty()) throw ConfigError("gen: split name is empty");
    if (out_dir.empty()) throw ConfigError("gen: output directory not set");
    decay.validate();
}

int effective_threads(int requested) {
    int n = requested > 0 ? requested : static_cast<int>(std::thread::hardware_concurrency());
    if (n <= 0) n = 1;
    if (const char* cap = std::getenv("DENOMAE_THREADS")) {
        const int c = std::atoi(cap);
        if (c > 0) n = std::min(n, c);
    }
    return std::max(1, n);
}

ModalitySample make_sample(sig::Scheme scheme, double snr_db, uint64_t seed, int image_side,
                           const render::DecayConfig& decay) {
    const sig::BasebandSignal clean = sig::synthesize(scheme, seed);
    const sig::ChannelDraw draw = sig::apply_awgn(clean, snr_db, seed);

    render::GridSpec grid;
    grid.resolution = image_side;

    ModalitySample s;
    s.images[0] = render::render_rgb(draw.noisy.samples, grid, decay);
    s.images[1] = render::render_rgb(draw.clean.samples, grid, decay);
    s.images[2] = sig::signal_to_image(sig::real_part(draw.noisy.samples), image_side);
    s.images[3] = sig::signal_to_image(sig::real_part(draw.clean.samples), image_side);
    s.images[4] = sig::signal_to_image(sig::real_part(draw.noise), image_side);
    return s;
}

DatasetManifest generate_dataset(const GenConfig& cfg) {
    cfg.validate();
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(cfg.out_dir / "tensors", ec);
    if (ec) throw IoError("cannot create output directory: " + cfg.out_dir.string());

    DatasetManifest manifest;
    manifest.split = cfg.split;
    manifest.dir = cfg.out_dir;
    manifest.records.resize(cfg.samples);

    const RngStream split_root = RngStream(cfg.seed).child(fnv1a(cfg.split));
    const auto& mods = model::all_modalities();

    std::atomic<int> next{0};
    std::atomic<bool> failed{false};
    std::string error_message;
    std::mutex error_mutex;

    auto worker = [&]() {
        while (!failed.load()) {
            const int i = next.fetch_add(1);
            if (i >= cfg.samples) break;
            try {
                RngStream rec_rng = split_root.child(rng_tag::sample_seed, i);
                const auto scheme =
                    cfg.schemes[rec_rng.next_below(cfg.schemes.size())];
                const double snr = cfg.snr_min == cfg.snr_max
                                       ? cfg.snr_min
                                       : rec_rng.next_uniform(cfg.snr_min, cfg.snr_max);
                const uint64_t sample_seed = rec_rng.next_u64();

                const ModalitySample sample =
                    make_sample(scheme, snr, sample_seed, cfg.image_side, cfg.decay);

                ManifestRecord rec;
                rec.sample_id = sample_id_for(cfg.split, i);
                rec.label = std::string(sig::scheme_name(scheme));
                rec.snr_db = snr;
                rec.seed = sample_seed;
                for (size_t mslot = 0; mslot < mods.size(); ++mslot) {
                    const std::string rel = "tensors/" + rec.sample_id + "." + mods[mslot] + ".dtnsr";
                    save_tensor(sample.images[mslot], cfg.out_dir / rel);
                    rec.files[mods[mslot]] = rel;
                }
                manifest.records[i] = std::move(rec);
            } catch (const std::exception& e) {
                std::lock_guard lock(error_mutex);
                failed.store(true);
                if (error_message.empty()) error_message = e.what();
            }
        }
    };

    const int n_threads = std::min(effective_threads(cfg.threads), cfg.samples);
    if (n_threads <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    if (failed.load()) throw DataError("dataset generation failed: " + error_message);

    manifest.save(cfg.out_dir / "manifest.jsonl");
    return manifest;
}

void DatasetManifest::save(const std::filesystem::path& manifest_path) const {
    std::ofstream f(manifest_path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open for write: " + manifest_path.string());
    nlohmann::json header;
    header["type"] = "manifest";
    header["version"] = version;
    header["split"] = split;
    header["count"] = records.size();
    f << header.dump() << "\n";
    for (const auto& rec : records) f << record_to_json(rec).dump() << "\n";
    if (!f) throw IoError("write failed: " + manifest_path.string());
}

DatasetManifest DatasetManifest::load(const std::filesystem::path& manifest_path) {
    std::ifstream f(manifest_path, std::ios::binary);
    if (!f) throw IoError("cannot open manifest: " + manifest_path.string());

    DatasetManifest manifest;
    manifest.dir = manifest_path.parent_path();

    std::string line;
    if (!std::getline(f, line)) throw DataError("manifest is empty: " + manifest_path.string());
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("manifest header parse failed: ") + e.what());
    }
    if (header.value("type", "") != std::string("manifest")) {
        throw DataError("not a manifest: " + manifest_path.string());
    }
    manifest.version = header.value("version", 1);
    manifest.split = header.value("split", "");

    std::set<std::string> seen_ids;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw DataError(std::string("manifest record parse failed: ") + e.what());
        }
        ManifestRecord rec = record_from_json(j);
        if (!seen_ids.insert(rec.sample_id).second) {
            throw DataError("duplicate sample_id in manifest: " + rec.sample_id);
        }
        for (const auto& [mod, rel] : rec.files) {
            if (!std::filesystem::exists(manifest.dir / rel)) {
                throw DataError("manifest references missing file: " + rel);
            }
        }
        manifest.records.push_back(std::move(rec));
    }
    const size_t expect = header.value("count", manifest.records.size());
    if (expect != manifest.records.size()) {
        throw DataError("manifest count mismatch: header says " + std::to_string(expect) +
                        ", found " + std::to_string(manifest.records.size()));
    }
    return manifest;
}

std::filesystem::path DatasetManifest::tensor_path(const ManifestRecord& rec,
                                                   const std::string& modality) const {
    const auto it = rec.files.find(modality);
    if (it == rec.files.end()) {
        throw DataError("record " + rec.sample_id + " has no modality '" + modality + "'");
    }
    return dir / it->second;
}

std::vector<ModalitySample> load_samples(const DatasetManifest& manifest,
                                         const std::vector<std::string>& modalities) {
    std::vector<ModalitySample> out(manifest.records.size());
    for (size_t i = 0; i < manifest.records.size(); ++i) {
        for (const auto& mod : modalities) {
            const int canon = model::canonical_modality_index(mod);
            out[i].images[canon] = load_tensor(manifest.tensor_path(manifest.records[i], mod));
        }
    }
    return out;
}

void assert_no_leakage(const DatasetManifest& train, const DatasetManifest& test) {
    std::set<std::string> ids;
    std::set<uint64_t> seeds;
    for (const auto& r : train.records) {
        ids.insert(r.sample_id);
        seeds.insert(r.seed);
    }
    for (const auto& r : test.records) {
        if (ids.count(r.sample_id)) {
            throw DataError("train/test leakage: shared sample_id " + r.sample_id);
        }
        if (seeds.count(r.seed)) {
            throw DataError("train/test leakage: shared generation seed for " + r.sample_id);
        }
    }
}

}  // namespace denomae::data
