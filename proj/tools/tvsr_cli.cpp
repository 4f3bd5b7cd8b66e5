#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "tvsr/checkpoint.hpp"
#include "tvsr/metrics.hpp"
#include "tvsr/model.hpp"
#include "tvsr/pipeline.hpp"
#include "tvsr/volume.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

constexpr int kExitValidation = 2;
constexpr int kExitRuntime = 3;

std::array<std::int64_t, 3> parse_triple(const std::string& text, const char* what) {
    std::array<std::int64_t, 3> out{};
    std::stringstream ss(text);
    std::string item;
    int i = 0;
    while (std::getline(ss, item, ',')) {
        if (i >= 3) throw std::invalid_argument(std::string(what) + ": expected three comma-separated values");
        out[i++] = std::stoll(item);
    }
    if (i != 3) throw std::invalid_argument(std::string(what) + ": expected three comma-separated values");
    return out;
}

std::array<double, 3> parse_triple_d(const std::string& text, const char* what) {
    std::array<double, 3> out{};
    std::stringstream ss(text);
    std::string item;
    int i = 0;
    while (std::getline(ss, item, ',')) {
        if (i >= 3) throw std::invalid_argument(std::string(what) + ": expected three comma-separated values");
        out[i++] = std::stod(item);
    }
    if (i != 3) throw std::invalid_argument(std::string(what) + ": expected three comma-separated values");
    return out;
}

void atomic_write_text(const std::string& path, const std::string& text) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::trunc);
        if (!out) throw std::runtime_error("cannot open '" + tmp + "'");
        out << text;
        if (!out) throw std::runtime_error("write failed for '" + tmp + "'");
    }
    fs::rename(tmp, path);
}

// ---------------------------------------------------------------------------
// config file: flat dotted keys, overridden by flags given on the command line
// ---------------------------------------------------------------------------

struct RunConfig {
    tvsr::ModelConfig model;
    tvsr::TrainConfig train;
    tvsr::InferenceSpec inference;
    std::string variant_name = "full";
    std::string patch_text = "4,32,32";
};

struct ConfigBinding {
    std::map<std::string, std::function<void(const ordered_json&)>> setters;
    std::map<std::string, CLI::Option*> options;

    void bind(const std::string& key, CLI::Option* opt, std::function<void(const ordered_json&)> set) {
        setters[key] = std::move(set);
        options[key] = opt;
    }

    void apply_file(const std::string& path) const {
        std::ifstream in(path);
        if (!in) throw std::invalid_argument("config: cannot open '" + path + "'");
        ordered_json doc;
        try {
            doc = ordered_json::parse(in);
        } catch (const nlohmann::json::exception& e) {
            throw std::invalid_argument(std::string("config: parse error: ") + e.what());
        }
        if (!doc.is_object()) throw std::invalid_argument("config: top level must be an object of dotted keys");
        for (const auto& [key, value] : doc.items()) {
            auto it = setters.find(key);
            if (it == setters.end()) throw std::invalid_argument("config: unknown key '" + key + "'");
            // flags win over file values
            auto opt = options.find(key);
            if (opt != options.end() && opt->second != nullptr && opt->second->count() > 0) continue;
            it->second(value);
        }
    }
};

void add_model_options(CLI::App* cmd, RunConfig& rc, ConfigBinding& binding) {
    auto* o1 = cmd->add_option("--embed-dim", rc.model.embed_dim, "Embedding width")->capture_default_str();
    auto* o2 = cmd->add_option("--heads", rc.model.heads, "Attention heads")->capture_default_str();
    auto* o3 = cmd->add_option("--encoder-depth", rc.model.encoder_depth, "Encoder STL2 block count")
                   ->capture_default_str();
    auto* o4 = cmd->add_option("--n-fim", rc.model.n_fim, "Decoder feature interaction modules")
                   ->capture_default_str();
    auto* o5 = cmd->add_option("--window", rc.model.window, "Attention window size")->capture_default_str();
    auto* o6 = cmd->add_option("--r", rc.model.r, "Depth upsampling factor")->capture_default_str();
    auto* o7 = cmd->add_option("--variant", rc.variant_name, "Model variant: full|no_tab|encoder_subpixel|vit_encoder")
                   ->capture_default_str();
    auto* o8 = cmd->add_option("--mlp-ratio", rc.model.mlp_ratio, "MLP expansion ratio")->capture_default_str();
    auto* o9 = cmd->add_option("--bias-hidden", rc.model.bias_hidden, "Positional-bias MLP hidden width")
                   ->capture_default_str();
    auto* o10 = cmd->add_option("--tau-min", rc.model.tau_min, "Cosine attention temperature floor")
                    ->capture_default_str();

    binding.bind("model.embed_dim", o1, [&rc](const ordered_json& v) { rc.model.embed_dim = v.get<std::int64_t>(); });
    binding.bind("model.heads", o2, [&rc](const ordered_json& v) { rc.model.heads = v.get<std::int64_t>(); });
    binding.bind("model.encoder_depth", o3,
                 [&rc](const ordered_json& v) { rc.model.encoder_depth = v.get<std::int64_t>(); });
    binding.bind("model.n_fim", o4, [&rc](const ordered_json& v) { rc.model.n_fim = v.get<std::int64_t>(); });
    binding.bind("model.window", o5, [&rc](const ordered_json& v) { rc.model.window = v.get<std::int64_t>(); });
    binding.bind("model.r", o6, [&rc](const ordered_json& v) { rc.model.r = v.get<std::int64_t>(); });
    binding.bind("model.variant", o7, [&rc](const ordered_json& v) { rc.variant_name = v.get<std::string>(); });
    binding.bind("model.mlp_ratio", o8, [&rc](const ordered_json& v) { rc.model.mlp_ratio = v.get<std::int64_t>(); });
    binding.bind("model.bias_hidden", o9,
                 [&rc](const ordered_json& v) { rc.model.bias_hidden = v.get<std::int64_t>(); });
    binding.bind("model.tau_min", o10, [&rc](const ordered_json& v) { rc.model.tau_min = v.get<double>(); });
    binding.bind("model.stl_per_tab", nullptr,
                 [&rc](const ordered_json& v) { rc.model.stl_per_tab = v.get<std::int64_t>(); });
}

// ---------------------------------------------------------------------------
// data discovery
// ---------------------------------------------------------------------------

struct LoadedPair {
    std::string id;
    std::unique_ptr<tvsr::Volume> lr;  // normalized
    std::unique_ptr<tvsr::Volume> hr;  // normalized
    bool pseudo = false;
};

bool ends_with(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

tvsr::Volume load_normalized(const std::string& path) {
    tvsr::Volume v = tvsr::read_volume(path);
    return v.unit == tvsr::IntensityUnit::raw_hu ? tvsr::normalize(v) : v;
}

// Pairs <stem>.thick.vsrv (and <stem>.pseudo-k<k>.vsrv) with <stem>.thin.vsrv.
// A pair is usable for upsampling factor r when the depth spacing ratio is r
// and the thin depth covers r * lr depth (the thin tail past full slabs is
// dropped).
std::vector<LoadedPair> discover_pairs(const std::string& dir, std::int64_t r, bool include_pseudo,
                                       std::vector<std::string>& warnings) {
    std::vector<LoadedPair> pairs;
    std::vector<fs::path> entries;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file()) entries.push_back(e.path());
    std::sort(entries.begin(), entries.end());

    auto try_pair = [&](const std::string& lr_path, const std::string& stem, bool pseudo, const std::string& id) {
        const std::string thin_path = (fs::path(dir) / (stem + ".thin.vsrv")).string();
        if (!fs::exists(thin_path)) {
            warnings.push_back("no thin partner for " + lr_path);
            return;
        }
        tvsr::Volume lr = load_normalized(lr_path);
        tvsr::Volume hr = load_normalized(thin_path);
        const double spacing_ratio = lr.spacing_mm[0] / hr.spacing_mm[0];
        if (std::fabs(spacing_ratio - static_cast<double>(r)) > 1e-6) {
            warnings.push_back(id + ": depth spacing ratio " + std::to_string(spacing_ratio) +
                               " does not match r=" + std::to_string(r) + ", skipped");
            return;
        }
        if (hr.height != lr.height || hr.width != lr.width) {
            warnings.push_back(id + ": in-plane dims differ, skipped");
            return;
        }
        if (hr.depth < r * lr.depth) {
            warnings.push_back(id + ": thin volume too short for r=" + std::to_string(r) + ", skipped");
            return;
        }
        if (hr.depth > r * lr.depth) {  // drop the tail past full slabs
            hr.voxels.resize(static_cast<std::size_t>(r * lr.depth * hr.height * hr.width));
            hr.depth = r * lr.depth;
        }
        LoadedPair p;
        p.id = id;
        p.lr = std::make_unique<tvsr::Volume>(std::move(lr));
        p.hr = std::make_unique<tvsr::Volume>(std::move(hr));
        p.pseudo = pseudo;
        pairs.push_back(std::move(p));
    };

    for (const auto& path : entries) {
        const std::string name = path.filename().string();
        if (ends_with(name, ".thick.vsrv")) {
            const std::string stem = name.substr(0, name.size() - std::string(".thick.vsrv").size());
            try_pair(path.string(), stem, false, stem);
        } else if (include_pseudo && name.find(".pseudo-k") != std::string::npos && ends_with(name, ".vsrv")) {
            const auto at = name.find(".pseudo-k");
            const std::string stem = name.substr(0, at);
            try_pair(path.string(), stem, true, name.substr(0, name.size() - 5));
        }
    }
    return pairs;
}

// ---------------------------------------------------------------------------
// train state round trip
// ---------------------------------------------------------------------------

std::vector<tvsr::NamedTensorData> adam_tensors(const tvsr::ModelParams& params, const tvsr::AdamState& adam) {
    std::vector<tvsr::NamedTensorData> out;
    const auto& items = params.store.items();
    for (std::size_t i = 0; i < items.size(); ++i) {
        out.push_back({"adam.m." + items[i].first, items[i].second.shape(), adam.m[i]});
        out.push_back({"adam.v." + items[i].first, items[i].second.shape(), adam.v[i]});
    }
    return out;
}

void restore_adam(const tvsr::CheckpointFile& file, const tvsr::ModelParams& params, tvsr::AdamState& adam) {
    const auto& items = params.store.items();
    adam.m.resize(items.size());
    adam.v.resize(items.size());
    for (std::size_t i = 0; i < items.size(); ++i) {
        const auto* m = file.find("adam.m." + items[i].first);
        const auto* v = file.find("adam.v." + items[i].first);
        if (m == nullptr || v == nullptr)
            throw std::runtime_error("checkpoint has no optimizer state for '" + items[i].first + "'");
        adam.m[i] = m->values;
        adam.v[i] = v->values;
    }
}

// ---------------------------------------------------------------------------
// subcommand implementations
// ---------------------------------------------------------------------------

int run_gen_phantom(const tvsr::PhantomSpec& spec, const std::string& out_dir, const std::string& stem) {
    auto [thin, thick] = tvsr::generate_phantom(spec);
    fs::create_directories(out_dir);
    const std::string thin_path = (fs::path(out_dir) / (stem + ".thin.vsrv")).string();
    const std::string thick_path = (fs::path(out_dir) / (stem + ".thick.vsrv")).string();
    tvsr::write_volume(thin, thin_path);
    tvsr::write_volume(thick, thick_path);
    std::printf("wrote %s: %lld x %lld x %lld @ (%g, %g, %g) mm\n", thin_path.c_str(),
                static_cast<long long>(thin.depth), static_cast<long long>(thin.height),
                static_cast<long long>(thin.width), thin.spacing_mm[0], thin.spacing_mm[1], thin.spacing_mm[2]);
    std::printf("wrote %s: %lld x %lld x %lld @ (%g, %g, %g) mm\n", thick_path.c_str(),
                static_cast<long long>(thick.depth), static_cast<long long>(thick.height),
                static_cast<long long>(thick.width), thick.spacing_mm[0], thick.spacing_mm[1],
                thick.spacing_mm[2]);
    return 0;
}

int run_make_pseudo_lr(const std::string& input, const std::string& out_dir, double max_thickness,
                       std::int64_t min_slices) {
    tvsr::Volume v = tvsr::read_volume(input);
    fs::create_directories(out_dir);
    std::string stem = fs::path(input).filename().string();
    for (const std::string suffix : {".thin.vsrv", ".vsrv"})
        if (ends_with(stem, suffix)) {
            stem = stem.substr(0, stem.size() - suffix.size());
            break;
        }

    auto factors = tvsr::pseudo_lr_factors(v.depth, v.spacing_mm[0], max_thickness, min_slices);
    std::set<std::int64_t> chosen(factors.begin(), factors.end());
    for (std::int64_t k = 2; k <= (factors.empty() ? 4 : factors.back() + 2); ++k) {
        if (chosen.count(k)) continue;
        const double thickness = static_cast<double>(k) * v.spacing_mm[0];
        if (thickness > max_thickness + 1e-9)
            std::printf("k=%lld rejected: thickness %.3g mm exceeds %.3g mm\n", static_cast<long long>(k),
                        thickness, max_thickness);
        else if (v.depth / k < min_slices)
            std::printf("k=%lld rejected: %lld slices fall below %lld\n", static_cast<long long>(k),
                        static_cast<long long>(v.depth / k), static_cast<long long>(min_slices));
    }
    if (factors.empty()) std::printf("warning: no admissible factors, nothing written\n");

    for (std::int64_t k : factors) {
        tvsr::Volume pseudo = tvsr::slab_mean_downsample(v, k);
        const std::string path = (fs::path(out_dir) / (stem + ".pseudo-k" + std::to_string(k) + ".vsrv")).string();
        tvsr::write_volume(pseudo, path);
        std::printf("k=%lld chosen: wrote %s (%lld slices, %.3g mm)\n", static_cast<long long>(k), path.c_str(),
                    static_cast<long long>(pseudo.depth), pseudo.spacing_mm[0]);
    }
    return 0;
}

int run_train(RunConfig& rc, const std::string& data_dir, const std::string& out_dir, const std::string& resume,
              bool use_pseudo) {
    rc.model.variant = tvsr::variant_from_name(rc.variant_name);
    auto patch = parse_triple(rc.patch_text, "--patch");
    rc.train.patch = {patch[0], patch[1], patch[2]};
    rc.model.validate();
    rc.train.validate();

    tvsr::ModelParams params;
    tvsr::AdamState adam;
    tvsr::Rng data_rng(rc.train.seed);
    std::int64_t start_step = 0;

    if (!resume.empty()) {
        auto file = tvsr::read_checkpoint_file(resume);
        params = tvsr::load_checkpoint<float>(file);
        rc.model = params.config;
        if (!file.extras.contains("train_state"))
            throw std::runtime_error("checkpoint '" + resume + "' has no train state to resume from");
        const auto& ts = file.extras["train_state"];
        start_step = ts.at("next_step").get<std::int64_t>();
        adam.step = ts.at("adam_step").get<std::int64_t>();
        rc.train.seed = ts.at("seed").get<std::uint64_t>();
        data_rng.deserialize(ts.at("rng").get<std::string>());
        restore_adam(file, params, adam);
        std::printf("resuming from %s at step %lld\n", resume.c_str(), static_cast<long long>(start_step));
    } else {
        params = tvsr::init_parameters<float>(rc.model, rc.train.seed);
    }

    std::vector<std::string> warnings;
    auto loaded = discover_pairs(data_dir, params.config.r, use_pseudo, warnings);
    for (const auto& w : warnings) std::printf("warning: %s\n", w.c_str());
    std::vector<tvsr::TrainingPair> pairs;
    for (const auto& p : loaded) pairs.push_back({p.lr.get(), p.hr.get(), p.id, p.pseudo});
    if (pairs.empty()) throw std::invalid_argument("train: no usable pairs in '" + data_dir + "'");

    std::printf("variant=%s parameters=%lld pairs=%zu (pseudo %zu)\n",
                tvsr::variant_name(params.config.variant).c_str(),
                static_cast<long long>(params.store.total_elements()), pairs.size(),
                static_cast<std::size_t>(std::count_if(pairs.begin(), pairs.end(),
                                                       [](const auto& p) { return p.pseudo; })));

    fs::create_directories(out_dir);
    const std::string ckpt_path = (fs::path(out_dir) / "checkpoint.tvsr").string();
    const std::string trace_path = (fs::path(out_dir) / "trace.csv").string();

    auto save_state = [&](const std::string& path, std::int64_t next_step) {
        ordered_json extras;
        extras["train_state"] = {{"next_step", next_step},
                                 {"adam_step", adam.step},
                                 {"rng", data_rng.serialize()},
                                 {"seed", rc.train.seed}};
        tvsr::save_checkpoint(params, path, extras, adam_tensors(params, adam));
    };

    std::vector<tvsr::StepRecord> validation;
    auto trace = tvsr::train(
        params, pairs, rc.train, adam, data_rng, start_step,
        [&](std::int64_t step) {
            const std::string path =
                (fs::path(out_dir) / ("checkpoint-step" + std::to_string(step) + ".tvsr")).string();
            save_state(path, step);
            std::printf("checkpoint at step %lld -> %s\n", static_cast<long long>(step), path.c_str());
        },
        &validation);

    save_state(ckpt_path, rc.train.steps);
    tvsr::write_loss_trace(trace, trace_path);
    if (!validation.empty()) {
        const std::string val_path = (fs::path(out_dir) / "validation.csv").string();
        tvsr::write_loss_trace(validation, val_path);
        std::printf("validation trace -> %s\n", val_path.c_str());
    }
    if (!trace.empty())
        std::printf("steps %lld..%lld loss %.6g -> %.6g\n", static_cast<long long>(trace.front().step),
                    static_cast<long long>(trace.back().step), trace.front().loss, trace.back().loss);
    std::printf("wrote %s and %s\n", ckpt_path.c_str(), trace_path.c_str());
    return 0;
}

int run_infer(const std::string& ckpt_path, const std::string& input, const std::string& output,
              tvsr::InferenceSpec spec, const std::string& config_path) {
    auto file = tvsr::read_checkpoint_file(ckpt_path);
    if (!config_path.empty()) {
        // reject configs that contradict the checkpoint
        std::ifstream in(config_path);
        if (!in) throw std::invalid_argument("config: cannot open '" + config_path + "'");
        ordered_json doc = ordered_json::parse(in);
        for (const auto& [key, value] : doc.items()) {
            if (key.rfind("model.", 0) != 0) continue;
            const std::string field = key.substr(6);
            if (file.config.contains(field) && file.config[field] != value)
                throw std::invalid_argument("config mismatch: '" + key + "' = " + value.dump() +
                                            " but checkpoint has " + file.config[field].dump());
        }
    }
    auto params = tvsr::load_checkpoint<float>(file);
    tvsr::Volume v = tvsr::read_volume(input);
    const auto windows = tvsr::extract_windows(v.unit == tvsr::IntensityUnit::raw_hu ? tvsr::normalize(v) : v, spec);
    tvsr::Volume sr = tvsr::infer(params, v, spec);
    tvsr::write_volume(sr, output);
    std::printf("processed %zu windows (depth %lld, overlap %lld); output %lld x %lld x %lld -> %s\n",
                windows.size(), static_cast<long long>(spec.window_depth), static_cast<long long>(spec.overlap),
                static_cast<long long>(sr.depth), static_cast<long long>(sr.height),
                static_cast<long long>(sr.width), output.c_str());
    return 0;
}

int run_eval(const std::string& ckpt_path, const std::string& data_dir, const std::string& pairs_manifest,
             const std::string& out_path, bool with_baseline, tvsr::InferenceSpec spec) {
    auto params = tvsr::load_checkpoint<float>(ckpt_path);
    const std::int64_t r = params.config.r;

    std::vector<std::pair<std::string, std::string>> pair_paths;  // (thick, thin)
    if (!pairs_manifest.empty()) {
        std::ifstream in(pairs_manifest);
        if (!in) throw std::invalid_argument("cannot open pairs manifest '" + pairs_manifest + "'");
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty() || line[0] == '#') continue;
            auto comma = line.find(',');
            if (comma == std::string::npos)
                throw std::invalid_argument("pairs manifest: malformed line '" + line + "'");
            pair_paths.emplace_back(line.substr(0, comma), line.substr(comma + 1));
        }
    } else {
        std::vector<fs::path> entries;
        for (const auto& e : fs::directory_iterator(data_dir))
            if (e.is_regular_file() && ends_with(e.path().filename().string(), ".thick.vsrv"))
                entries.push_back(e.path());
        std::sort(entries.begin(), entries.end());
        for (const auto& p : entries) {
            std::string stem = p.filename().string();
            stem = stem.substr(0, stem.size() - std::string(".thick.vsrv").size());
            pair_paths.emplace_back(p.string(), (fs::path(data_dir) / (stem + ".thin.vsrv")).string());
        }
    }

    std::vector<std::unique_ptr<tvsr::Volume>> storage;
    std::vector<tvsr::EvalInput> model_inputs, baseline_inputs;
    for (const auto& [thick_path, thin_path] : pair_paths) {
        const std::string id = fs::path(thick_path).filename().string();
        if (!fs::exists(thick_path) || !fs::exists(thin_path)) {
            std::printf("warning: %s unpaired, skipped\n", id.c_str());
            continue;
        }
        tvsr::Volume thick = load_normalized(thick_path);
        tvsr::Volume thin = load_normalized(thin_path);
        if (thin.height != thick.height || thin.width != thick.width || thin.depth != r * thick.depth) {
            std::printf("warning: %s shape mismatch against its thin partner, skipped\n", id.c_str());
            continue;
        }
        auto sr = std::make_unique<tvsr::Volume>(tvsr::infer(params, thick, spec));
        auto hr = std::make_unique<tvsr::Volume>(std::move(thin));
        model_inputs.push_back({id, sr.get(), hr.get()});
        storage.push_back(std::move(sr));
        if (with_baseline) {
            auto base = std::make_unique<tvsr::Volume>(tvsr::baseline_interpolate(thick, r));
            baseline_inputs.push_back({id, base.get(), hr.get()});
            storage.push_back(std::move(base));
        }
        storage.push_back(std::move(hr));
    }
    if (model_inputs.empty()) throw std::runtime_error("eval: no usable pairs");

    auto model_report = tvsr::evaluate_set(model_inputs);
    std::string text = tvsr::serialize_eval_report(model_report, "model");
    if (with_baseline) {
        auto baseline_report = tvsr::evaluate_set(baseline_inputs);
        text += tvsr::serialize_eval_report(baseline_report, "baseline");
        std::printf("model    PSNR %.3f dB  SSIM %.4f\n", model_report.psnr_summary.mean,
                    model_report.ssim_summary.mean);
        std::printf("baseline PSNR %.3f dB  SSIM %.4f\n", baseline_report.psnr_summary.mean,
                    baseline_report.ssim_summary.mean);
    } else {
        std::printf("model PSNR %.3f dB  SSIM %.4f over %zu pairs\n", model_report.psnr_summary.mean,
                    model_report.ssim_summary.mean, model_inputs.size());
    }
    atomic_write_text(out_path, text);
    std::printf("wrote %s\n", out_path.c_str());
    return 0;
}

int run_slice_sim(const std::string& thick_path, const std::string& thin_path, const std::string& out_path) {
    tvsr::Volume thick = tvsr::read_volume(thick_path);
    tvsr::Volume thin = tvsr::read_volume(thin_path);
    auto report = tvsr::slice_similarity_study(thick, thin);
    atomic_write_text(out_path, tvsr::serialize_slice_report(report));
    auto show = [](const char* name, const tvsr::SliceGroupStats& g) {
        if (g.present)
            std::printf("%s: %lld pairs, mean PSNR %.3f dB (%lld identical), mean SSIM %.4f, %lld skipped\n", name,
                        static_cast<long long>(g.count), g.mean_psnr, static_cast<long long>(g.psnr_identical),
                        g.mean_ssim, static_cast<long long>(g.skipped));
        else
            std::printf("%s: absent (%lld skipped)\n", name, static_cast<long long>(g.skipped));
    };
    show("match", report.match);
    show("near", report.near);
    show("far", report.far);
    std::printf("wrote %s\n", out_path.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Volumetric CT super-resolution toolkit"};
    app.require_subcommand(1);

    // gen-phantom
    auto* gen = app.add_subcommand("gen-phantom", "Generate a synthetic thin/thick CT-like phantom pair");
    tvsr::PhantomSpec phantom;
    std::string gen_dims = "16,64,64", gen_spacing = "1,1,1", gen_out = ".", gen_stem = "phantom";
    gen->add_option("--seed", phantom.seed, "Random seed")->capture_default_str();
    gen->add_option("--dims", gen_dims, "Thin volume dims D,H,W")->capture_default_str();
    gen->add_option("--spacing", gen_spacing, "Thin voxel spacing sz,sy,sx in mm")->capture_default_str();
    gen->add_option("--thick-factor", phantom.thick_factor, "Slices per thick slab")->capture_default_str();
    gen->add_option("--ellipsoids", phantom.n_ellipsoids, "Ellipsoid count")->capture_default_str();
    gen->add_option("--tubes", phantom.n_tubes, "Tube count")->capture_default_str();
    gen->add_option("--background-modes", phantom.background_modes, "Smooth background mode count")
        ->capture_default_str();
    gen->add_option("--noise-sigma", phantom.noise_sigma_hu, "Additive noise sigma in HU")->capture_default_str();
    gen->add_option("--stem", gen_stem, "Output file stem")->capture_default_str();
    gen->add_option("-o,--out", gen_out, "Output directory")->capture_default_str();

    // make-pseudo-lr
    auto* pseudo = app.add_subcommand("make-pseudo-lr", "Emit pseudo low-resolution volumes from a thin volume");
    std::string pseudo_input, pseudo_out = ".";
    double pseudo_max_thickness = 3.0;
    std::int64_t pseudo_min_slices = 130;
    pseudo->add_option("-i,--input", pseudo_input, "Thin volume file")->required();
    pseudo->add_option("-o,--out", pseudo_out, "Output directory")->capture_default_str();
    pseudo->add_option("--max-thickness", pseudo_max_thickness, "Maximum pseudo slice thickness in mm")
        ->capture_default_str();
    pseudo->add_option("--min-slices", pseudo_min_slices, "Minimum pseudo slice count")->capture_default_str();

    // train
    auto* train_cmd = app.add_subcommand("train", "Train on aligned thick/thin pairs");
    RunConfig rc;
    ConfigBinding binding;
    std::string train_data, train_out = "runs", train_config, train_resume;
    bool train_pseudo = false;
    train_cmd->add_option("--data", train_data, "Directory of <stem>.thick.vsrv / <stem>.thin.vsrv pairs")
        ->required();
    train_cmd->add_option("-o,--out", train_out, "Output directory")->capture_default_str();
    auto* cfg_opt = train_cmd->add_option("--config", train_config, "JSON config file with flat dotted keys");
    train_cmd->add_option("--resume", train_resume, "Checkpoint to resume from");
    train_cmd->add_flag("--pseudo", train_pseudo, "Include pseudo low-resolution pairs");
    bool train_no_flip = false;
    train_cmd->add_flag("--no-flip", train_no_flip, "Disable horizontal flip augmentation");
    auto* t1 = train_cmd->add_option("--steps", rc.train.steps, "Adam steps")->capture_default_str();
    auto* t2 = train_cmd->add_option("--lr", rc.train.lr, "Learning rate")->capture_default_str();
    auto* t3 = train_cmd->add_option("--batch", rc.train.batch, "Patches per step")->capture_default_str();
    auto* t4 = train_cmd->add_option("--seed", rc.train.seed, "Seed for init and patch sampling")
                   ->capture_default_str();
    auto* t5 = train_cmd->add_option("--patch", rc.patch_text, "Patch dims d,h,w in LR slices")
                   ->capture_default_str();
    auto* t6 = train_cmd->add_option("--checkpoint-interval", rc.train.checkpoint_interval,
                                     "Save a checkpoint every N steps (0 = final only)")
                   ->capture_default_str();
    auto* t7 = train_cmd->add_option("--phase1-steps", rc.train.phase1_steps,
                                     "Steps on real pairs before pseudo pairs join (-1 = real only)")
                   ->capture_default_str();
    auto* t8 = train_cmd->add_option("--validation-interval", rc.train.validation_interval,
                                     "Record a held-out-patch loss every N steps (0 = off)")
                   ->capture_default_str();
    add_model_options(train_cmd, rc, binding);
    binding.bind("train.steps", t1, [&rc](const ordered_json& v) { rc.train.steps = v.get<std::int64_t>(); });
    binding.bind("train.lr", t2, [&rc](const ordered_json& v) { rc.train.lr = v.get<double>(); });
    binding.bind("train.batch", t3, [&rc](const ordered_json& v) { rc.train.batch = v.get<std::int64_t>(); });
    binding.bind("train.seed", t4, [&rc](const ordered_json& v) { rc.train.seed = v.get<std::uint64_t>(); });
    binding.bind("train.patch", t5, [&rc](const ordered_json& v) { rc.patch_text = v.get<std::string>(); });
    binding.bind("train.checkpoint_interval", t6,
                 [&rc](const ordered_json& v) { rc.train.checkpoint_interval = v.get<std::int64_t>(); });
    binding.bind("train.phase1_steps", t7,
                 [&rc](const ordered_json& v) { rc.train.phase1_steps = v.get<std::int64_t>(); });
    binding.bind("train.validation_interval", t8,
                 [&rc](const ordered_json& v) { rc.train.validation_interval = v.get<std::int64_t>(); });

    // infer
    auto* infer_cmd = app.add_subcommand("infer", "Sliding-window super-resolution of one volume");
    std::string infer_ckpt, infer_input, infer_output, infer_config;
    tvsr::InferenceSpec infer_spec;
    infer_cmd->add_option("--checkpoint", infer_ckpt, "Trained checkpoint")->required();
    infer_cmd->add_option("-i,--input", infer_input, "Input volume")->required();
    infer_cmd->add_option("-o,--output", infer_output, "Output volume path")->required();
    infer_cmd->add_option("--config", infer_config, "Config file cross-checked against the checkpoint");
    infer_cmd->add_option("--window-depth", infer_spec.window_depth, "Input window depth")->capture_default_str();
    infer_cmd->add_option("--overlap", infer_spec.overlap, "Window overlap in slices")->capture_default_str();
    infer_cmd->add_option("--workers", infer_spec.workers, "Concurrent window workers")->capture_default_str();

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on thick/thin pairs");
    std::string eval_ckpt, eval_data, eval_pairs, eval_out = "eval-report.csv";
    bool eval_baseline = false;
    tvsr::InferenceSpec eval_spec;
    eval_cmd->add_option("--checkpoint", eval_ckpt, "Trained checkpoint")->required();
    eval_cmd->add_option("--data", eval_data, "Directory of thick/thin pairs");
    eval_cmd->add_option("--pairs", eval_pairs, "Manifest of thick_path,thin_path lines");
    eval_cmd->add_option("-o,--out", eval_out, "Report path")->capture_default_str();
    eval_cmd->add_flag("--with-baseline", eval_baseline, "Also evaluate cubic depth interpolation");
    eval_cmd->add_option("--workers", eval_spec.workers, "Concurrent window workers")->capture_default_str();

    // slice-sim
    auto* sim_cmd = app.add_subcommand("slice-sim", "Slice similarity by physical distance");
    std::string sim_thick, sim_thin, sim_out = "slice-similarity.csv";
    sim_cmd->add_option("--thick", sim_thick, "Thick volume")->required();
    sim_cmd->add_option("--thin", sim_thin, "Thin volume")->required();
    sim_cmd->add_option("-o,--out", sim_out, "Report path")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitValidation;
    }

    try {
        if (*gen) {
            auto dims = parse_triple(gen_dims, "--dims");
            phantom.depth = dims[0];
            phantom.height = dims[1];
            phantom.width = dims[2];
            phantom.spacing_mm = parse_triple_d(gen_spacing, "--spacing");
            return run_gen_phantom(phantom, gen_out, gen_stem);
        }
        if (*pseudo) return run_make_pseudo_lr(pseudo_input, pseudo_out, pseudo_max_thickness, pseudo_min_slices);
        if (*train_cmd) {
            if (cfg_opt->count() > 0) binding.apply_file(train_config);
            rc.train.flip_augment = !train_no_flip;
            return run_train(rc, train_data, train_out, train_resume, train_pseudo);
        }
        if (*infer_cmd) return run_infer(infer_ckpt, infer_input, infer_output, infer_spec, infer_config);
        if (*eval_cmd) {
            if (eval_data.empty() && eval_pairs.empty())
                throw std::invalid_argument("eval: provide --data or --pairs");
            return run_eval(eval_ckpt, eval_data, eval_pairs, eval_out, eval_baseline, eval_spec);
        }
        if (*sim_cmd) return run_slice_sim(sim_thick, sim_thin, sim_out);
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitValidation;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitRuntime;
    }
    return 0;
}
