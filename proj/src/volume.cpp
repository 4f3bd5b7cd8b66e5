#include "tvsr/volume.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace tvsr {

static_assert(std::endian::native == std::endian::little, "volume format is little-endian only");

void Volume::validate() const {
    if (depth < 1 || height < 1 || width < 1)
        throw std::invalid_argument("Volume: dims must be positive");
    if (spacing_mm[0] <= 0 || spacing_mm[1] <= 0 || spacing_mm[2] <= 0)
        throw std::invalid_argument("Volume: spacing must be positive");
    if (static_cast<std::int64_t>(voxels.size()) != size())
        throw std::invalid_argument("Volume: voxel count " + std::to_string(voxels.size()) +
                                    " does not match dims");
    for (float v : voxels)
        if (!std::isfinite(v)) throw std::invalid_argument("Volume: non-finite voxel");
    if (unit == IntensityUnit::normalized)
        for (float v : voxels)
            if (v < 0.0f || v > 1.0f)
                throw std::invalid_argument("Volume: normalized voxel out of [0, 1]");
}

Volume make_volume(std::int64_t depth, std::int64_t height, std::int64_t width, std::array<double, 3> spacing_mm,
                   IntensityUnit unit, float fill) {
    Volume v;
    v.depth = depth;
    v.height = height;
    v.width = width;
    v.spacing_mm = spacing_mm;
    v.unit = unit;
    v.voxels.assign(static_cast<std::size_t>(depth * height * width), fill);
    v.validate();
    return v;
}

Volume normalize(const Volume& v) {
    if (v.unit != IntensityUnit::raw_hu) throw std::invalid_argument("normalize: volume is not raw_hu");
    Volume out = v;
    out.unit = IntensityUnit::normalized;
    for (auto& x : out.voxels) {
        double clipped = std::clamp(static_cast<double>(x), kHuClipLow, kHuClipHigh);
        x = static_cast<float>((clipped - kHuClipLow) / (kHuClipHigh - kHuClipLow));
    }
    return out;
}

Volume denormalize(const Volume& v) {
    if (v.unit != IntensityUnit::normalized) throw std::invalid_argument("denormalize: volume is not normalized");
    Volume out = v;
    out.unit = IntensityUnit::raw_hu;
    for (auto& x : out.voxels)
        x = static_cast<float>(static_cast<double>(x) * (kHuClipHigh - kHuClipLow) + kHuClipLow);
    return out;
}

Volume slab_mean_downsample(const Volume& v, std::int64_t k) {
    if (k < 1) throw std::invalid_argument("slab_mean_downsample: k must be >= 1");
    if (v.depth < k) throw std::invalid_argument("slab_mean_downsample: fewer than k slices");
    Volume out;
    out.depth = v.depth / k;
    out.height = v.height;
    out.width = v.width;
    out.spacing_mm = {v.spacing_mm[0] * static_cast<double>(k), v.spacing_mm[1], v.spacing_mm[2]};
    out.unit = v.unit;
    out.voxels.assign(static_cast<std::size_t>(out.size()), 0.0f);
    const std::int64_t plane = v.height * v.width;
    for (std::int64_t j = 0; j < out.depth; ++j) {
        float* dst = out.voxels.data() + j * plane;
        for (std::int64_t p = 0; p < plane; ++p) {
            double acc = 0.0;
            for (std::int64_t s = 0; s < k; ++s) acc += v.voxels[(k * j + s) * plane + p];
            dst[p] = static_cast<float>(acc / static_cast<double>(k));
        }
    }
    return out;
}

std::vector<std::int64_t> pseudo_lr_factors(std::int64_t depth, double spacing_mm, double max_thickness_mm,
                                            std::int64_t min_slices) {
    std::vector<std::int64_t> factors;
    for (std::int64_t k = 2;; ++k) {
        // both admission conditions are monotone in k, so the first failure ends the ladder
        if (static_cast<double>(k) * spacing_mm > max_thickness_mm + 1e-9) break;
        if (depth / k < min_slices) break;
        factors.push_back(k);
    }
    return factors;
}

std::vector<Volume> make_pseudo_lr(const Volume& v, double max_thickness_mm, std::int64_t min_slices) {
    std::vector<Volume> out;
    for (std::int64_t k : pseudo_lr_factors(v.depth, v.spacing_mm[0], max_thickness_mm, min_slices))
        out.push_back(slab_mean_downsample(v, k));
    return out;
}

PatchPair sample_patch_pair(const Volume& lr, const Volume& hr, const PatchSpec& patch, Rng& rng,
                            const std::string& volume_id, bool allow_flip) {
    if (lr.unit != IntensityUnit::normalized || hr.unit != IntensityUnit::normalized)
        throw std::invalid_argument("sample_patch_pair: both volumes must be normalized");
    if (lr.height != hr.height || lr.width != hr.width)
        throw std::invalid_argument("sample_patch_pair: in-plane dims differ");
    if (hr.depth % lr.depth != 0)
        throw std::invalid_argument("sample_patch_pair: hr depth is not a multiple of lr depth");
    const std::int64_t r = hr.depth / lr.depth;
    if (patch.depth > lr.depth || patch.height > lr.height || patch.width > lr.width)
        throw std::invalid_argument("sample_patch_pair: patch larger than volume");

    const std::int64_t z0 = rng.uniform_int(0, lr.depth - patch.depth);
    const std::int64_t y0 = rng.uniform_int(0, lr.height - patch.height);
    const std::int64_t x0 = rng.uniform_int(0, lr.width - patch.width);
    const bool flip = allow_flip && rng.bernoulli();

    PatchPair pair;
    pair.lr_depth = patch.depth;
    pair.hr_depth = r * patch.depth;
    pair.height = patch.height;
    pair.width = patch.width;
    pair.provenance = {volume_id, z0, y0, x0, flip};

    auto crop = [&](const Volume& src, std::int64_t zs, std::int64_t zn, std::vector<float>& dst) {
        dst.resize(static_cast<std::size_t>(zn * patch.height * patch.width));
        std::size_t i = 0;
        for (std::int64_t z = zs; z < zs + zn; ++z)
            for (std::int64_t y = y0; y < y0 + patch.height; ++y)
                for (std::int64_t x = x0; x < x0 + patch.width; ++x) {
                    std::int64_t xs = flip ? (x0 + patch.width - 1 - (x - x0)) : x;
                    dst[i++] = src.at(z, y, xs);
                }
    };
    crop(lr, z0, patch.depth, pair.lr);
    crop(hr, r * z0, r * patch.depth, pair.hr);
    return pair;
}

// ---------------------------------------------------------------------------
// phantom generation
// ---------------------------------------------------------------------------

void PhantomSpec::validate() const {
    if (depth < 16 || height < 16 || width < 16)
        throw std::invalid_argument("PhantomSpec: dims must be >= 16");
    if (spacing_mm[0] <= 0 || spacing_mm[1] <= 0 || spacing_mm[2] <= 0)
        throw std::invalid_argument("PhantomSpec: spacing must be positive");
    if (thick_factor < 1) throw std::invalid_argument("PhantomSpec: thick_factor must be >= 1");
    if (depth % thick_factor != 0)
        throw std::invalid_argument("PhantomSpec: depth must be divisible by thick_factor");
    if (n_ellipsoids < 0 || n_tubes < 0 || background_modes < 0)
        throw std::invalid_argument("PhantomSpec: counts must be >= 0");
    if (noise_sigma_hu < 0) throw std::invalid_argument("PhantomSpec: noise sigma must be >= 0");
    if (ellipsoid_radius_min_mm <= 0 || ellipsoid_radius_max_mm < ellipsoid_radius_min_mm)
        throw std::invalid_argument("PhantomSpec: bad ellipsoid radius range");
    if (tube_radius_min_mm <= 0 || tube_radius_max_mm < tube_radius_min_mm)
        throw std::invalid_argument("PhantomSpec: bad tube radius range");
    if (tube_z_scale < 0) throw std::invalid_argument("PhantomSpec: tube_z_scale must be >= 0");
}

namespace {

struct Tube {
    std::array<double, 3> point_mm;
    std::array<double, 3> direction;  // unit vector
    double radius_mm;
    float intensity_hu;
};

}  // namespace

std::pair<Volume, Volume> generate_phantom(const PhantomSpec& spec) {
    spec.validate();
    Rng rng(spec.seed);
    Volume thin = make_volume(spec.depth, spec.height, spec.width, spec.spacing_mm, IntensityUnit::raw_hu);

    const double ext_z = static_cast<double>(spec.depth) * spec.spacing_mm[0];
    const double ext_y = static_cast<double>(spec.height) * spec.spacing_mm[1];
    const double ext_x = static_cast<double>(spec.width) * spec.spacing_mm[2];

    struct Mode {
        double amp, fz, fy, fx, phase;
    };
    std::vector<Mode> modes;
    for (std::int64_t m = 0; m < spec.background_modes; ++m)
        modes.push_back({rng.uniform(-spec.background_amplitude_hu, spec.background_amplitude_hu),
                         rng.uniform(0.25, 2.0), rng.uniform(0.25, 2.0), rng.uniform(0.25, 2.0),
                         rng.uniform(0.0, 2.0 * M_PI)});

    std::vector<Ellipsoid> ellipsoids = spec.fixed_ellipsoids;
    for (std::int64_t e = 0; e < spec.n_ellipsoids; ++e) {
        Ellipsoid el;
        el.center_frac = {rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8)};
        el.radius_mm = {rng.uniform(spec.ellipsoid_radius_min_mm, spec.ellipsoid_radius_max_mm),
                        rng.uniform(spec.ellipsoid_radius_min_mm, spec.ellipsoid_radius_max_mm),
                        rng.uniform(spec.ellipsoid_radius_min_mm, spec.ellipsoid_radius_max_mm)};
        el.intensity_hu = static_cast<float>(rng.uniform(-100.0, 400.0));
        ellipsoids.push_back(el);
    }

    std::vector<Tube> tubes;
    for (std::int64_t t = 0; t < spec.n_tubes; ++t) {
        Tube tube;
        tube.point_mm = {rng.uniform(0.2, 0.8) * ext_z, rng.uniform(0.2, 0.8) * ext_y,
                         rng.uniform(0.2, 0.8) * ext_x};
        double dz = rng.normal() * spec.tube_z_scale, dy = rng.normal(), dx = rng.normal();
        double len = std::sqrt(dz * dz + dy * dy + dx * dx);
        if (len < 1e-9) {
            dz = 1.0;
            len = 1.0;
        }
        tube.direction = {dz / len, dy / len, dx / len};
        tube.radius_mm = rng.uniform(spec.tube_radius_min_mm, spec.tube_radius_max_mm);
        tube.intensity_hu = rng.bernoulli() ? -950.0f : 250.0f;  // airway vs vessel
        tubes.push_back(tube);
    }

    for (std::int64_t z = 0; z < spec.depth; ++z) {
        const double pz = (static_cast<double>(z) + 0.5) * spec.spacing_mm[0];
        for (std::int64_t y = 0; y < spec.height; ++y) {
            const double py = (static_cast<double>(y) + 0.5) * spec.spacing_mm[1];
            for (std::int64_t x = 0; x < spec.width; ++x) {
                const double px = (static_cast<double>(x) + 0.5) * spec.spacing_mm[2];
                double value = spec.background_base_hu;
                for (const auto& m : modes)
                    value += m.amp * std::cos(2.0 * M_PI * (m.fz * pz / ext_z + m.fy * py / ext_y +
                                                            m.fx * px / ext_x) + m.phase);
                for (const auto& el : ellipsoids) {
                    const double cz = el.center_frac[0] * ext_z;
                    const double cy = el.center_frac[1] * ext_y;
                    const double cx = el.center_frac[2] * ext_x;
                    const double q = [&] {
                        double a = (pz - cz) / el.radius_mm[0];
                        double b = (py - cy) / el.radius_mm[1];
                        double c = (px - cx) / el.radius_mm[2];
                        return a * a + b * b + c * c;
                    }();
                    if (q <= 1.0) value = el.intensity_hu;
                }
                for (const auto& tb : tubes) {
                    const double vz = pz - tb.point_mm[0];
                    const double vy = py - tb.point_mm[1];
                    const double vx = px - tb.point_mm[2];
                    const double along = vz * tb.direction[0] + vy * tb.direction[1] + vx * tb.direction[2];
                    const double rz = vz - along * tb.direction[0];
                    const double ry = vy - along * tb.direction[1];
                    const double rx = vx - along * tb.direction[2];
                    if (rz * rz + ry * ry + rx * rx <= tb.radius_mm * tb.radius_mm) value = tb.intensity_hu;
                }
                thin.at(z, y, x) = static_cast<float>(value);
            }
        }
    }

    if (spec.noise_sigma_hu > 0)
        for (auto& v : thin.voxels) v = static_cast<float>(v + rng.normal(0.0, spec.noise_sigma_hu));

    Volume thick = slab_mean_downsample(thin, spec.thick_factor);
    return {std::move(thin), std::move(thick)};
}

// ---------------------------------------------------------------------------
// file I/O
// ---------------------------------------------------------------------------

void write_volume(const Volume& v, const std::string& path) {
    v.validate();
    nlohmann::ordered_json header;
    header["dims"] = {v.depth, v.height, v.width};
    header["spacing_mm"] = {v.spacing_mm[0], v.spacing_mm[1], v.spacing_mm[2]};
    header["unit"] = unit_name(v.unit);
    header["dtype"] = "f32le";

    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("write_volume: cannot open '" + tmp + "'");
        out << kVolumeMagic << "\n" << header.dump() << "\n";
        out.write(reinterpret_cast<const char*>(v.voxels.data()),
                  static_cast<std::streamsize>(v.voxels.size() * sizeof(float)));
        if (!out) throw std::runtime_error("write_volume: write failed for '" + tmp + "'");
    }
    std::filesystem::rename(tmp, path);
}

Volume read_volume(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("read_volume: cannot open '" + path + "'");
    std::string magic;
    if (!std::getline(in, magic) || magic != kVolumeMagic)
        throw std::runtime_error("read_volume: bad magic in '" + path + "'");
    std::string header_line;
    if (!std::getline(in, header_line)) throw std::runtime_error("read_volume: missing header line");

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(header_line);
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(std::string("read_volume: malformed header: ") + e.what());
    }
    for (const auto& [key, _] : header.items())
        if (key != "dims" && key != "spacing_mm" && key != "unit" && key != "dtype")
            throw std::runtime_error("read_volume: unknown header key '" + key + "'");
    if (!header.contains("dims") || !header.contains("spacing_mm") || !header.contains("unit") ||
        !header.contains("dtype"))
        throw std::runtime_error("read_volume: header missing required keys");
    if (header["dtype"] != "f32le") throw std::runtime_error("read_volume: unsupported dtype");

    Volume v;
    auto dims = header["dims"];
    auto spacing = header["spacing_mm"];
    if (!dims.is_array() || dims.size() != 3 || !spacing.is_array() || spacing.size() != 3)
        throw std::runtime_error("read_volume: dims/spacing_mm must be 3-element arrays");
    v.depth = dims[0].get<std::int64_t>();
    v.height = dims[1].get<std::int64_t>();
    v.width = dims[2].get<std::int64_t>();
    v.spacing_mm = {spacing[0].get<double>(), spacing[1].get<double>(), spacing[2].get<double>()};
    const std::string unit = header["unit"].get<std::string>();
    if (unit == "raw_hu")
        v.unit = IntensityUnit::raw_hu;
    else if (unit == "normalized")
        v.unit = IntensityUnit::normalized;
    else
        throw std::runtime_error("read_volume: unknown unit '" + unit + "'");
    if (v.depth < 1 || v.height < 1 || v.width < 1) throw std::runtime_error("read_volume: non-positive dims");
    if (v.spacing_mm[0] <= 0 || v.spacing_mm[1] <= 0 || v.spacing_mm[2] <= 0)
        throw std::runtime_error("read_volume: non-positive spacing");

    v.voxels.resize(static_cast<std::size_t>(v.size()));
    in.read(reinterpret_cast<char*>(v.voxels.data()),
            static_cast<std::streamsize>(v.voxels.size() * sizeof(float)));
    if (in.gcount() != static_cast<std::streamsize>(v.voxels.size() * sizeof(float)))
        throw std::runtime_error("read_volume: payload shorter than header dims promise");
    in.peek();
    if (!in.eof()) throw std::runtime_error("read_volume: payload longer than header dims promise");
    v.validate();
    return v;
}

}  // namespace tvsr
