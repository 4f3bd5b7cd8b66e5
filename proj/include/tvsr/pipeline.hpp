#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "tvsr/model.hpp"
#include "tvsr/rng.hpp"
#include "tvsr/tensor.hpp"
#include "tvsr/volume.hpp"

namespace tvsr {

// ---------------------------------------------------------------------------
// sliding-window inference
// ---------------------------------------------------------------------------

struct InferenceSpec {
    std::int64_t window_depth = 4;
    std::int64_t overlap = 1;
    int workers = 1;

    void validate() const {
        if (window_depth < 1) throw std::invalid_argument("InferenceSpec: window_depth must be >= 1");
        if (overlap < 0 || overlap >= window_depth)
            throw std::invalid_argument("InferenceSpec: require 0 <= overlap < window_depth");
        if (workers < 1) throw std::invalid_argument("InferenceSpec: workers must be >= 1");
    }
};

struct InputWindow {
    std::int64_t start = 0;
    std::vector<float> data;  // window_depth * H * W; short windows repeat their last slice
};

struct SrWindow {
    std::int64_t start = 0;
    std::vector<float> data;  // r * window_depth * H * W
};

// Windows start at stride (window_depth - overlap); a final short window
// repeats the last input slice. Every slice of v is covered at least once.
std::vector<InputWindow> extract_windows(const Volume& v, const InferenceSpec& spec);

// Voxel-wise mean of overlapping window outputs, accumulated in ascending
// window-start order with double precision. Output slices past r * d_in
// (produced from replicated pad slices) are discarded.
Volume assemble(const std::vector<SrWindow>& outputs, std::int64_t d_in, std::int64_t height, std::int64_t width,
                const InferenceSpec& spec, std::int64_t r, const std::array<double, 3>& in_spacing);

// Evaluates one input window of shape (d, h, w) to r*d output slices.
using WindowModelFn =
    std::function<std::vector<float>(const std::vector<float>&, std::int64_t, std::int64_t, std::int64_t)>;

// Full sliding-window pipeline. Raw input is normalized first; the result is
// clamped to [0, 1] and keeps in-plane spacing with depth spacing / r.
Volume infer(const WindowModelFn& model, std::int64_t r, const Volume& v, const InferenceSpec& spec);
Volume infer(const ModelParams& params, const Volume& v, const InferenceSpec& spec);

// Window evaluator for a trained model (no gradient recording; thread-safe
// under shared immutable parameters). `params` must outlive the function.
WindowModelFn model_window_fn(const ModelParams& params);

// Catmull-Rom interpolation along depth at r-times sampling, in-plane
// untouched, clamped to [0, 1]. Boundary samples are extended linearly so
// ramps are reproduced exactly. D < 2 falls back to slice repetition and
// reports it through fell_back.
Volume baseline_interpolate(const Volume& v, std::int64_t r, bool* fell_back = nullptr);

// ---------------------------------------------------------------------------
// training
// ---------------------------------------------------------------------------

struct TrainConfig {
    std::int64_t steps = 500;
    double lr = 1e-4;
    std::int64_t batch = 1;
    std::uint64_t seed = 0;
    PatchSpec patch{4, 32, 32};
    std::int64_t checkpoint_interval = 0;   // 0 = final checkpoint only
    std::int64_t validation_interval = 0;    // 0 = no validation passes
    std::int64_t phase1_steps = -1;          // step count trained on real pairs only; -1 = real-only throughout
    bool flip_augment = true;                // mirror W on both volumes of a sampled pair

    void validate() const {
        if (steps < 1) throw std::invalid_argument("TrainConfig: steps must be >= 1");
        if (lr < 0) throw std::invalid_argument("TrainConfig: lr must be nonnegative");
        if (batch < 1) throw std::invalid_argument("TrainConfig: batch must be >= 1");
        if (patch.depth < 1 || patch.height < 1 || patch.width < 1)
            throw std::invalid_argument("TrainConfig: bad patch spec");
        if (checkpoint_interval < 0) throw std::invalid_argument("TrainConfig: bad checkpoint interval");
        if (validation_interval < 0) throw std::invalid_argument("TrainConfig: bad validation interval");
    }
};

struct TrainingPair {
    const Volume* lr = nullptr;  // normalized
    const Volume* hr = nullptr;  // normalized
    std::string id;
    bool pseudo = false;
};

struct StepRecord {
    std::int64_t step = 0;
    double loss = 0.0;
};

// Per step: sample a patch pair, forward, L1, backward, Adam. Pseudo pairs
// join the sampling pool once step >= phase1_steps (when enabled). A
// non-finite loss aborts with the step index and patch provenance.
// When validation_interval > 0, the loss on a fixed flip-free patch (drawn
// once from the first real pair with a seed-derived generator) is recorded
// into validation_trace every interval, without touching the parameters.
std::vector<StepRecord> train(ModelParams& params, const std::vector<TrainingPair>& pairs, const TrainConfig& cfg,
                              AdamState& adam, Rng& data_rng, std::int64_t start_step = 0,
                              const std::function<void(std::int64_t)>& on_checkpoint = {},
                              std::vector<StepRecord>* validation_trace = nullptr);

// Comma-separated "step,loss" lines.
void write_loss_trace(const std::vector<StepRecord>& trace, const std::string& path);
std::vector<StepRecord> read_loss_trace(const std::string& path);

}  // namespace tvsr
