#include "tvsr/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

namespace tvsr {

namespace {

void require_comparable(const Volume& a, const Volume& b, const char* op) {
    if (a.depth != b.depth || a.height != b.height || a.width != b.width)
        throw std::invalid_argument(std::string(op) + ": shape mismatch");
    if (a.unit != IntensityUnit::normalized || b.unit != IntensityUnit::normalized)
        throw std::invalid_argument(std::string(op) + ": volumes must be normalized");
}

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

PsnrResult psnr(const Volume& a, const Volume& b, double max_val) {
    require_comparable(a, b, "psnr");
    double acc = 0.0;
    const std::size_t n = a.voxels.size();
    for (std::size_t i = 0; i < n; ++i) {
        const double d = static_cast<double>(a.voxels[i]) - static_cast<double>(b.voxels[i]);
        acc += d * d;
    }
    const double mse = acc / static_cast<double>(n);
    if (mse == 0.0) return {true, 0.0};
    return {false, 10.0 * std::log10(max_val * max_val / mse)};
}

namespace {

std::vector<double> gaussian_kernel(std::int64_t window, double sigma) {
    std::vector<double> k(static_cast<std::size_t>(window));
    const double c = static_cast<double>(window - 1) / 2.0;
    double total = 0.0;
    for (std::int64_t i = 0; i < window; ++i) {
        k[i] = std::exp(-((i - c) * (i - c)) / (2.0 * sigma * sigma));
        total += k[i];
    }
    for (auto& v : k) v /= total;
    return k;
}

// Separable valid-mode Gaussian filter of one plane: (H, W) -> (H-w+1, W-w+1).
void gaussian_valid(const std::vector<double>& src, std::int64_t h, std::int64_t w,
                    const std::vector<double>& kernel, std::vector<double>& tmp, std::vector<double>& dst) {
    const std::int64_t kw = static_cast<std::int64_t>(kernel.size());
    const std::int64_t wv = w - kw + 1;
    const std::int64_t hv = h - kw + 1;
    tmp.assign(static_cast<std::size_t>(h * wv), 0.0);
    for (std::int64_t y = 0; y < h; ++y)
        for (std::int64_t x = 0; x < wv; ++x) {
            double acc = 0.0;
            for (std::int64_t t = 0; t < kw; ++t) acc += kernel[t] * src[y * w + x + t];
            tmp[y * wv + x] = acc;
        }
    dst.assign(static_cast<std::size_t>(hv * wv), 0.0);
    for (std::int64_t y = 0; y < hv; ++y)
        for (std::int64_t x = 0; x < wv; ++x) {
            double acc = 0.0;
            for (std::int64_t t = 0; t < kw; ++t) acc += kernel[t] * tmp[(y + t) * wv + x];
            dst[y * wv + x] = acc;
        }
}

}  // namespace

SsimResult ssim(const Volume& a, const Volume& b, const SsimOptions& options) {
    require_comparable(a, b, "ssim");
    SsimResult result;
    std::int64_t window = options.window;
    const std::int64_t plane_min = std::min(a.height, a.width);
    if (window > plane_min) {
        window = plane_min % 2 == 1 ? plane_min : plane_min - 1;
        if (window < 1) window = 1;
        result.window_reduced = true;
    }
    result.window_used = window;

    const double c1 = (options.k1 * options.dynamic_range) * (options.k1 * options.dynamic_range);
    const double c2 = (options.k2 * options.dynamic_range) * (options.k2 * options.dynamic_range);
    const auto kernel = gaussian_kernel(window, options.sigma);
    const std::int64_t h = a.height, w = a.width;
    const std::int64_t plane = h * w;

    std::vector<double> pa(static_cast<std::size_t>(plane)), pb(static_cast<std::size_t>(plane));
    std::vector<double> paa(static_cast<std::size_t>(plane)), pbb(static_cast<std::size_t>(plane)),
        pab(static_cast<std::size_t>(plane));
    std::vector<double> tmp, mu_a, mu_b, m_aa, m_bb, m_ab;

    double slice_total = 0.0;
    for (std::int64_t z = 0; z < a.depth; ++z) {
        const float* sa = a.slice(z);
        const float* sb = b.slice(z);
        for (std::int64_t p = 0; p < plane; ++p) {
            pa[p] = sa[p];
            pb[p] = sb[p];
            paa[p] = pa[p] * pa[p];
            pbb[p] = pb[p] * pb[p];
            pab[p] = pa[p] * pb[p];
        }
        gaussian_valid(pa, h, w, kernel, tmp, mu_a);
        gaussian_valid(pb, h, w, kernel, tmp, mu_b);
        gaussian_valid(paa, h, w, kernel, tmp, m_aa);
        gaussian_valid(pbb, h, w, kernel, tmp, m_bb);
        gaussian_valid(pab, h, w, kernel, tmp, m_ab);

        double acc = 0.0;
        for (std::size_t i = 0; i < mu_a.size(); ++i) {
            const double va = m_aa[i] - mu_a[i] * mu_a[i];
            const double vb = m_bb[i] - mu_b[i] * mu_b[i];
            const double cov = m_ab[i] - mu_a[i] * mu_b[i];
            acc += ((2.0 * mu_a[i] * mu_b[i] + c1) * (2.0 * cov + c2)) /
                   ((mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + c1) * (va + vb + c2));
        }
        slice_total += acc / static_cast<double>(mu_a.size());
    }
    result.value = slice_total / static_cast<double>(a.depth);
    return result;
}

// ---------------------------------------------------------------------------
// reports
// ---------------------------------------------------------------------------

namespace {

double percentile(std::vector<double> sorted, double q) {
    const std::size_t n = sorted.size();
    if (n == 1) return sorted[0];
    const double h = q * static_cast<double>(n - 1);
    const std::size_t lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, n - 1);
    const double frac = h - std::floor(h);
    return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

MetricSummary summarize(std::vector<double> values, std::int64_t n_identical) {
    MetricSummary s;
    s.n = static_cast<std::int64_t>(values.size());
    s.n_identical = n_identical;
    if (values.empty()) return s;
    double total = 0.0;
    for (double v : values) total += v;
    s.mean = total / static_cast<double>(values.size());
    if (values.size() > 1) {
        double ss = 0.0;
        for (double v : values) ss += (v - s.mean) * (v - s.mean);
        s.stddev = std::sqrt(ss / static_cast<double>(values.size() - 1));
    }
    std::sort(values.begin(), values.end());
    s.lo = percentile(values, 0.025);
    s.hi = percentile(values, 0.975);
    return s;
}

}  // namespace

EvalReport evaluate_set(const std::vector<EvalInput>& pairs) {
    if (pairs.empty()) throw std::invalid_argument("evaluate_set: empty pair set");
    EvalReport report;
    std::vector<double> psnr_values, ssim_values;
    std::int64_t n_identical = 0;
    for (const auto& p : pairs) {
        PairMetrics row;
        row.id = p.id;
        row.psnr = psnr(*p.sr, *p.hr);
        auto s = ssim(*p.sr, *p.hr);
        row.ssim = s.value;
        row.ssim_window_reduced = s.window_reduced;
        if (row.psnr.identical)
            ++n_identical;
        else
            psnr_values.push_back(row.psnr.db);
        ssim_values.push_back(row.ssim);
        report.rows.push_back(std::move(row));
    }
    report.psnr_summary = summarize(std::move(psnr_values), n_identical);
    report.ssim_summary = summarize(std::move(ssim_values), 0);
    return report;
}

std::string serialize_eval_report(const EvalReport& report, const std::string& label) {
    std::ostringstream out;
    out << "tvsr-eval-report,v1\n";
    out << "columns,label,id,psnr_db,psnr_identical,ssim,ssim_window_reduced\n";
    for (const auto& row : report.rows)
        out << "pair," << label << "," << row.id << "," << (row.psnr.identical ? "na" : fmt_double(row.psnr.db))
            << "," << (row.psnr.identical ? 1 : 0) << "," << fmt_double(row.ssim) << ","
            << (row.ssim_window_reduced ? 1 : 0) << "\n";
    auto stat = [&](const char* metric, const MetricSummary& s) {
        out << "stat," << label << "," << metric << "," << fmt_double(s.mean) << "," << fmt_double(s.stddev) << ","
            << fmt_double(s.lo) << "," << fmt_double(s.hi) << "," << s.n << "," << s.n_identical << "\n";
    };
    stat("psnr", report.psnr_summary);
    stat("ssim", report.ssim_summary);
    return out.str();
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            fields.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    fields.push_back(cur);
    return fields;
}

}  // namespace

EvalReport parse_eval_report(const std::string& text, const std::string& label) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != "tvsr-eval-report,v1")
        throw std::runtime_error("parse_eval_report: bad header");
    EvalReport report;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto fields = split_csv(line);
        if (fields[0] == "pair" && fields.size() == 7 && fields[1] == label) {
            PairMetrics row;
            row.id = fields[2];
            row.psnr.identical = fields[4] == "1";
            row.psnr.db = row.psnr.identical ? 0.0 : std::stod(fields[3]);
            row.ssim = std::stod(fields[5]);
            row.ssim_window_reduced = fields[6] == "1";
            report.rows.push_back(std::move(row));
        } else if (fields[0] == "stat" && fields.size() == 9 && fields[1] == label) {
            MetricSummary s;
            s.mean = std::stod(fields[3]);
            s.stddev = std::stod(fields[4]);
            s.lo = std::stod(fields[5]);
            s.hi = std::stod(fields[6]);
            s.n = std::stoll(fields[7]);
            s.n_identical = std::stoll(fields[8]);
            if (fields[2] == "psnr")
                report.psnr_summary = s;
            else if (fields[2] == "ssim")
                report.ssim_summary = s;
        }
    }
    return report;
}

// ---------------------------------------------------------------------------
// slice similarity
// ---------------------------------------------------------------------------

namespace {

Volume wrap_slice(const Volume& v, std::int64_t z) {
    Volume s;
    s.depth = 1;
    s.height = v.height;
    s.width = v.width;
    s.spacing_mm = v.spacing_mm;
    s.unit = v.unit;
    s.voxels.assign(v.slice(z), v.slice(z) + v.height * v.width);
    return s;
}

struct GroupAccumulator {
    std::int64_t count = 0, skipped = 0, identical = 0;
    double psnr_total = 0.0, ssim_total = 0.0;

    SliceGroupStats finish() const {
        SliceGroupStats g;
        g.present = count > 0;
        g.count = count;
        g.skipped = skipped;
        g.psnr_identical = identical;
        const std::int64_t n_psnr = count - identical;
        g.mean_psnr = n_psnr > 0 ? psnr_total / static_cast<double>(n_psnr) : 0.0;
        g.mean_ssim = count > 0 ? ssim_total / static_cast<double>(count) : 0.0;
        return g;
    }
};

}  // namespace

SliceSimilarityReport slice_similarity_study(const Volume& thick_in, const Volume& thin_in) {
    if (thick_in.height != thin_in.height || thick_in.width != thin_in.width)
        throw std::invalid_argument("slice_similarity_study: in-plane dims differ");
    const Volume thick = thick_in.unit == IntensityUnit::raw_hu ? normalize(thick_in) : thick_in;
    const Volume thin = thin_in.unit == IntensityUnit::raw_hu ? normalize(thin_in) : thin_in;
    const double s_thick = thick.spacing_mm[0];
    const double s_thin = thin.spacing_mm[0];

    GroupAccumulator groups[3];
    const double offsets[3] = {0.0, 1.0, 2.0};
    for (std::int64_t j = 0; j < thick.depth; ++j) {
        const double center = (static_cast<double>(j) + 0.5) * s_thick;  // voxel-center coordinates
        for (int g = 0; g < 3; ++g) {
            for (int sign = (g == 0 ? 1 : -1); sign <= 1; sign += 2) {
                const double target = center + sign * offsets[g];
                const double idx = target / s_thin - 0.5;
                const double rounded = std::round(idx);
                if (std::fabs(idx - rounded) > 1e-6 || rounded < 0 ||
                    rounded > static_cast<double>(thin.depth - 1)) {
                    groups[g].skipped += 1;
                    continue;
                }
                const std::int64_t i = static_cast<std::int64_t>(rounded);
                Volume a = wrap_slice(thick, j);
                Volume b = wrap_slice(thin, i);
                auto p = psnr(a, b);
                auto s = ssim(a, b);
                groups[g].count += 1;
                if (p.identical)
                    groups[g].identical += 1;
                else
                    groups[g].psnr_total += p.db;
                groups[g].ssim_total += s.value;
                if (g == 0) break;  // offset 0 has a single direction
            }
        }
    }
    SliceSimilarityReport report;
    report.match = groups[0].finish();
    report.near = groups[1].finish();
    report.far = groups[2].finish();
    return report;
}

std::string serialize_slice_report(const SliceSimilarityReport& report) {
    std::ostringstream out;
    out << "tvsr-slice-similarity,v1\n";
    out << "columns,group,offset_mm,present,count,skipped,psnr_identical,mean_psnr_db,mean_ssim\n";
    auto row = [&](const char* name, double off, const SliceGroupStats& g) {
        out << "group," << name << "," << off << "," << (g.present ? 1 : 0) << "," << g.count << "," << g.skipped
            << "," << g.psnr_identical << "," << fmt_double(g.mean_psnr) << "," << fmt_double(g.mean_ssim) << "\n";
    };
    row("match", 0.0, report.match);
    row("near", 1.0, report.near);
    row("far", 2.0, report.far);
    return out.str();
}

}  // namespace tvsr
