#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tvsr/volume.hpp"

namespace tvsr {

// PSNR distinguishes the zero-MSE case instead of reporting infinity.
struct PsnrResult {
    bool identical = false;
    double db = 0.0;
};

PsnrResult psnr(const Volume& a, const Volume& b, double max_val = 1.0);

struct SsimOptions {
    std::int64_t window = 11;
    double sigma = 1.5;
    double k1 = 0.01;
    double k2 = 0.03;
    double dynamic_range = 1.0;
};

struct SsimResult {
    double value = 0.0;
    bool window_reduced = false;
    std::int64_t window_used = 11;
};

// Gaussian-weighted SSIM per axial slice (valid windows only), averaged over
// slices. A window larger than the plane is reduced to the largest odd size
// that fits and flagged.
SsimResult ssim(const Volume& a, const Volume& b, const SsimOptions& options = {});

// ---------------------------------------------------------------------------
// evaluation reports
// ---------------------------------------------------------------------------

struct PairMetrics {
    std::string id;
    PsnrResult psnr;
    double ssim = 0.0;
    bool ssim_window_reduced = false;
};

struct MetricSummary {
    double mean = 0.0;
    double stddev = 0.0;      // sample standard deviation
    double lo = 0.0;          // 2.5 percentile
    double hi = 0.0;          // 97.5 percentile
    std::int64_t n = 0;       // values aggregated
    std::int64_t n_identical = 0;
};

struct EvalReport {
    std::vector<PairMetrics> rows;
    MetricSummary psnr_summary;  // over non-identical pairs
    MetricSummary ssim_summary;  // over all pairs
};

struct EvalInput {
    std::string id;
    const Volume* sr = nullptr;
    const Volume* hr = nullptr;
};

EvalReport evaluate_set(const std::vector<EvalInput>& pairs);

// Line-oriented report text; see README for the field order.
std::string serialize_eval_report(const EvalReport& report, const std::string& label = "model");
EvalReport parse_eval_report(const std::string& text, const std::string& label = "model");

// ---------------------------------------------------------------------------
// slice-distance similarity study
// ---------------------------------------------------------------------------

struct SliceGroupStats {
    bool present = false;
    std::int64_t count = 0;        // slice pairs compared
    std::int64_t skipped = 0;      // offsets that left the thin volume or fell between slices
    std::int64_t psnr_identical = 0;
    double mean_psnr = 0.0;        // over non-identical pairs
    double mean_ssim = 0.0;
};

struct SliceSimilarityReport {
    SliceGroupStats match;  // 0 mm
    SliceGroupStats near;   // +/- 1 mm
    SliceGroupStats far;    // +/- 2 mm
};

// Compares every thick slice against thin slices at physical offsets
// 0 / 1 / 2 mm, using voxel-center coordinates (slice i sits at (i + 0.5) *
// spacing).
SliceSimilarityReport slice_similarity_study(const Volume& thick, const Volume& thin);

std::string serialize_slice_report(const SliceSimilarityReport& report);

}  // namespace tvsr
