#include "tvsr/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

namespace tvsr {

std::vector<InputWindow> extract_windows(const Volume& v, const InferenceSpec& spec) {
    spec.validate();
    if (v.unit != IntensityUnit::normalized)
        throw std::invalid_argument("extract_windows: volume must be normalized");
    const std::int64_t stride = spec.window_depth - spec.overlap;
    const std::int64_t plane = v.height * v.width;
    std::vector<InputWindow> windows;
    for (std::int64_t start = 0;; start += stride) {
        InputWindow win;
        win.start = start;
        win.data.resize(static_cast<std::size_t>(spec.window_depth * plane));
        for (std::int64_t t = 0; t < spec.window_depth; ++t) {
            const std::int64_t z = std::min(start + t, v.depth - 1);  // repeat the last slice
            std::copy_n(v.slice(z), plane, win.data.begin() + t * plane);
        }
        windows.push_back(std::move(win));
        if (start + spec.window_depth >= v.depth) break;
    }
    return windows;
}

Volume assemble(const std::vector<SrWindow>& outputs, std::int64_t d_in, std::int64_t height, std::int64_t width,
                const InferenceSpec& spec, std::int64_t r, const std::array<double, 3>& in_spacing) {
    spec.validate();
    if (r < 1) throw std::invalid_argument("assemble: r must be >= 1");
    const std::int64_t plane = height * width;
    const std::int64_t out_depth = r * d_in;
    const std::int64_t win_out_depth = r * spec.window_depth;
    for (const auto& o : outputs)
        if (static_cast<std::int64_t>(o.data.size()) != win_out_depth * plane)
            throw std::invalid_argument("assemble: window output has inconsistent shape");

    std::vector<const SrWindow*> ordered;
    ordered.reserve(outputs.size());
    for (const auto& o : outputs) ordered.push_back(&o);
    std::sort(ordered.begin(), ordered.end(),
              [](const SrWindow* a, const SrWindow* b) { return a->start < b->start; });

    std::vector<double> sums(static_cast<std::size_t>(out_depth * plane), 0.0);
    std::vector<std::int32_t> counts(static_cast<std::size_t>(out_depth), 0);
    for (const SrWindow* win : ordered) {
        for (std::int64_t t = 0; t < win_out_depth; ++t) {
            const std::int64_t g = r * win->start + t;
            if (g >= out_depth) break;  // slices from replicated padding
            counts[g] += 1;
            const float* src = win->data.data() + t * plane;
            double* dst = sums.data() + g * plane;
            for (std::int64_t p = 0; p < plane; ++p) dst[p] += src[p];
        }
    }

    Volume out;
    out.depth = out_depth;
    out.height = height;
    out.width = width;
    out.spacing_mm = {in_spacing[0] / static_cast<double>(r), in_spacing[1], in_spacing[2]};
    out.unit = IntensityUnit::normalized;
    out.voxels.resize(static_cast<std::size_t>(out_depth * plane));
    for (std::int64_t z = 0; z < out_depth; ++z) {
        if (counts[z] == 0) throw std::runtime_error("assemble: uncovered output slice " + std::to_string(z));
        const double inv = 1.0 / static_cast<double>(counts[z]);
        const double* src = sums.data() + z * plane;
        float* dst = out.voxels.data() + z * plane;
        for (std::int64_t p = 0; p < plane; ++p) dst[p] = static_cast<float>(src[p] * inv);
    }
    return out;
}

Volume infer(const WindowModelFn& model, std::int64_t r, const Volume& v, const InferenceSpec& spec) {
    const Volume& normalized_view = v;
    Volume normalized_storage;
    const Volume* nv = &normalized_view;
    if (v.unit == IntensityUnit::raw_hu) {
        normalized_storage = normalize(v);
        nv = &normalized_storage;
    }
    auto windows = extract_windows(*nv, spec);
    std::vector<SrWindow> outputs(windows.size());

    auto evaluate_range = [&](std::size_t begin, std::size_t end) {
        NoGradGuard no_grad;
        for (std::size_t i = begin; i < end; ++i) {
            outputs[i].start = windows[i].start;
            outputs[i].data = model(windows[i].data, spec.window_depth, nv->height, nv->width);
        }
    };

    if (spec.workers <= 1 || windows.size() <= 1) {
        evaluate_range(0, windows.size());
    } else {
        const std::size_t n_workers = std::min<std::size_t>(spec.workers, windows.size());
        std::vector<std::thread> pool;
        const std::size_t chunk = (windows.size() + n_workers - 1) / n_workers;
        for (std::size_t w = 0; w < n_workers; ++w) {
            std::size_t begin = w * chunk;
            std::size_t end = std::min(windows.size(), begin + chunk);
            if (begin >= end) break;
            pool.emplace_back(evaluate_range, begin, end);
        }
        for (auto& t : pool) t.join();
    }

    Volume out = assemble(outputs, nv->depth, nv->height, nv->width, spec, r, nv->spacing_mm);
    for (auto& x : out.voxels) x = std::clamp(x, 0.0f, 1.0f);
    return out;
}

WindowModelFn model_window_fn(const ModelParams& params) {
    const std::int64_t r = params.config.r;
    return [&params, r](const std::vector<float>& data, std::int64_t d, std::int64_t h, std::int64_t w) {
        NoGradGuard no_grad;
        auto x = Tensor::from_data({1, 1, d, h, w}, data);
        auto y = forward(x, params);
        auto span = y.data();
        return std::vector<float>(span.begin(), span.end());
    };
}

Volume infer(const ModelParams& params, const Volume& v, const InferenceSpec& spec) {
    return infer(model_window_fn(params), params.config.r, v, spec);
}

Volume baseline_interpolate(const Volume& v, std::int64_t r, bool* fell_back) {
    if (v.unit != IntensityUnit::normalized)
        throw std::invalid_argument("baseline_interpolate: volume must be normalized");
    if (r < 1) throw std::invalid_argument("baseline_interpolate: r must be >= 1");
    if (fell_back) *fell_back = false;

    Volume out;
    out.depth = r * v.depth;
    out.height = v.height;
    out.width = v.width;
    out.spacing_mm = {v.spacing_mm[0] / static_cast<double>(r), v.spacing_mm[1], v.spacing_mm[2]};
    out.unit = IntensityUnit::normalized;
    out.voxels.resize(static_cast<std::size_t>(out.depth * v.height * v.width));

    const std::int64_t plane = v.height * v.width;
    if (v.depth < 2) {
        if (fell_back) *fell_back = true;
        for (std::int64_t z = 0; z < out.depth; ++z)
            std::copy_n(v.slice(0), plane, out.voxels.begin() + z * plane);
        return out;
    }

    const std::int64_t d = v.depth;
    for (std::int64_t p = 0; p < plane; ++p) {
        // linear extension beyond both ends keeps ramps exact
        auto sample = [&](std::int64_t i) -> double {
            if (i < 0)
                return static_cast<double>(v.voxels[p]) +
                       static_cast<double>(i) * (static_cast<double>(v.voxels[plane + p]) -
                                                 static_cast<double>(v.voxels[p]));
            if (i >= d)
                return static_cast<double>(v.voxels[(d - 1) * plane + p]) +
                       static_cast<double>(i - (d - 1)) * (static_cast<double>(v.voxels[(d - 1) * plane + p]) -
                                                           static_cast<double>(v.voxels[(d - 2) * plane + p]));
            return static_cast<double>(v.voxels[i * plane + p]);
        };
        for (std::int64_t o = 0; o < out.depth; ++o) {
            const double zc = (static_cast<double>(o) + 0.5) / static_cast<double>(r) - 0.5;
            const double fl = std::floor(zc);
            const std::int64_t i1 = static_cast<std::int64_t>(fl);
            const double t = zc - fl;
            const double p0 = sample(i1 - 1), p1 = sample(i1), p2 = sample(i1 + 1), p3 = sample(i1 + 2);
            const double t2 = t * t, t3 = t2 * t;
            const double value = 0.5 * ((-t3 + 2.0 * t2 - t) * p0 + (3.0 * t3 - 5.0 * t2 + 2.0) * p1 +
                                        (-3.0 * t3 + 4.0 * t2 + t) * p2 + (t3 - t2) * p3);
            out.voxels[o * plane + p] = static_cast<float>(std::clamp(value, 0.0, 1.0));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// training
// ---------------------------------------------------------------------------

std::vector<StepRecord> train(ModelParams& params, const std::vector<TrainingPair>& pairs, const TrainConfig& cfg,
                              AdamState& adam, Rng& data_rng, std::int64_t start_step,
                              const std::function<void(std::int64_t)>& on_checkpoint,
                              std::vector<StepRecord>* validation_trace) {
    cfg.validate();
    if (pairs.empty()) throw std::invalid_argument("train: no training pairs");
    const std::int64_t r = params.config.r;
    std::vector<std::size_t> real_pool, full_pool;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        const auto& p = pairs[i];
        if (p.lr == nullptr || p.hr == nullptr) throw std::invalid_argument("train: null volume in pair");
        if (p.hr->depth != r * p.lr->depth)
            throw std::invalid_argument("train: pair '" + p.id + "' depth ratio does not match model r=" +
                                        std::to_string(r));
        if (p.lr->depth < cfg.patch.depth || p.lr->height < cfg.patch.height || p.lr->width < cfg.patch.width)
            throw std::invalid_argument("train: pair '" + p.id + "' smaller than the patch spec");
        if (!p.pseudo) real_pool.push_back(i);
        full_pool.push_back(i);
    }
    if (real_pool.empty()) throw std::invalid_argument("train: no real (non-pseudo) pairs");

    adam.lr = cfg.lr;
    auto tensors = params.store.tensors();
    std::vector<StepRecord> trace;
    trace.reserve(static_cast<std::size_t>(cfg.steps - start_step));

    const std::int64_t pd = cfg.patch.depth, ph = cfg.patch.height, pw = cfg.patch.width;
    PatchPair val_patch;
    if (cfg.validation_interval > 0 && validation_trace != nullptr) {
        Rng val_rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);
        const auto& vp = pairs[real_pool.front()];
        val_patch = sample_patch_pair(*vp.lr, *vp.hr, cfg.patch, val_rng, vp.id, /*allow_flip=*/false);
    }
    auto run_validation = [&](std::int64_t step) {
        if (cfg.validation_interval == 0 || validation_trace == nullptr) return;
        if ((step + 1) % cfg.validation_interval != 0 && step + 1 != cfg.steps) return;
        NoGradGuard no_grad;
        FiniteCheckGuard speed(false);
        auto x = Tensor::from_data({1, 1, pd, ph, pw}, val_patch.lr);
        auto y = Tensor::from_data({1, 1, r * pd, ph, pw}, val_patch.hr);
        validation_trace->push_back({step, static_cast<double>(l1_loss(forward(x, params), y).item())});
    };

    for (std::int64_t step = start_step; step < cfg.steps; ++step) {
        const bool include_pseudo = cfg.phase1_steps >= 0 && step >= cfg.phase1_steps;
        const auto& pool = include_pseudo ? full_pool : real_pool;

        std::vector<float> lr_data(static_cast<std::size_t>(cfg.batch * pd * ph * pw));
        std::vector<float> hr_data(static_cast<std::size_t>(cfg.batch * r * pd * ph * pw));
        std::string provenance;
        for (std::int64_t b = 0; b < cfg.batch; ++b) {
            const auto& pair = pairs[pool[static_cast<std::size_t>(
                data_rng.uniform_int(0, static_cast<std::int64_t>(pool.size()) - 1))]];
            PatchPair patch = sample_patch_pair(*pair.lr, *pair.hr, cfg.patch, data_rng, pair.id, cfg.flip_augment);
            std::copy(patch.lr.begin(), patch.lr.end(), lr_data.begin() + b * pd * ph * pw);
            std::copy(patch.hr.begin(), patch.hr.end(), hr_data.begin() + b * r * pd * ph * pw);
            if (b > 0) provenance += ";";
            provenance += patch.provenance.volume_id + "@" + std::to_string(patch.provenance.z0) + "," +
                          std::to_string(patch.provenance.y0) + "," + std::to_string(patch.provenance.x0) +
                          (patch.provenance.flipped ? ",flip" : "");
        }

        double loss_value;
        {
            FiniteCheckGuard speed(false);  // the loss is checked below instead
            auto x = Tensor::from_data({cfg.batch, 1, pd, ph, pw}, std::move(lr_data));
            auto y = Tensor::from_data({cfg.batch, 1, r * pd, ph, pw}, std::move(hr_data));
            auto y_hat = forward(x, params);
            auto loss = l1_loss(y_hat, y);
            loss_value = static_cast<double>(loss.item());
            if (!std::isfinite(loss_value))
                throw std::runtime_error("train: non-finite loss at step " + std::to_string(step) + " (patch " +
                                         provenance + ")");
            params.store.zero_grad();
            loss.backward();
            adam_step(tensors, adam);
        }
        trace.push_back({step, loss_value});
        run_validation(step);
        if (cfg.checkpoint_interval > 0 && on_checkpoint && (step + 1) % cfg.checkpoint_interval == 0 &&
            step + 1 < cfg.steps)
            on_checkpoint(step + 1);
    }
    return trace;
}

void write_loss_trace(const std::vector<StepRecord>& trace, const std::string& path) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::trunc);
        if (!out) throw std::runtime_error("write_loss_trace: cannot open '" + tmp + "'");
        char line[64];
        for (const auto& rec : trace) {
            std::snprintf(line, sizeof(line), "%lld,%.10g\n", static_cast<long long>(rec.step), rec.loss);
            out << line;
        }
        if (!out) throw std::runtime_error("write_loss_trace: write failed");
    }
    std::filesystem::rename(tmp, path);
}

std::vector<StepRecord> read_loss_trace(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("read_loss_trace: cannot open '" + path + "'");
    std::vector<StepRecord> trace;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto comma = line.find(',');
        if (comma == std::string::npos) throw std::runtime_error("read_loss_trace: malformed line '" + line + "'");
        trace.push_back({std::stoll(line.substr(0, comma)), std::stod(line.substr(comma + 1))});
    }
    return trace;
}

}  // namespace tvsr
