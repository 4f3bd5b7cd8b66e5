#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "tvsr/rng.hpp"

namespace tvsr {

enum class IntensityUnit { raw_hu, normalized };

inline std::string unit_name(IntensityUnit u) { return u == IntensityUnit::raw_hu ? "raw_hu" : "normalized"; }

// A 3D scalar field with per-axis physical spacing. Voxels are stored
// depth-major (slice 0 first, row-major within a slice).
struct Volume {
    std::int64_t depth = 0;
    std::int64_t height = 0;
    std::int64_t width = 0;
    std::array<double, 3> spacing_mm{1.0, 1.0, 1.0};  // (z, y, x)
    IntensityUnit unit = IntensityUnit::raw_hu;
    std::vector<float> voxels;

    std::int64_t size() const { return depth * height * width; }

    float& at(std::int64_t z, std::int64_t y, std::int64_t x) {
        return voxels[(z * height + y) * width + x];
    }
    float at(std::int64_t z, std::int64_t y, std::int64_t x) const {
        return voxels[(z * height + y) * width + x];
    }

    const float* slice(std::int64_t z) const { return voxels.data() + z * height * width; }

    void validate() const;
};

Volume make_volume(std::int64_t depth, std::int64_t height, std::int64_t width,
                   std::array<double, 3> spacing_mm = {1.0, 1.0, 1.0},
                   IntensityUnit unit = IntensityUnit::raw_hu, float fill = 0.0f);

// HU intensities clipped to [-1024, 2048] and mapped onto [0, 1].
inline constexpr double kHuClipLow = -1024.0;
inline constexpr double kHuClipHigh = 2048.0;

Volume normalize(const Volume& v);
Volume denormalize(const Volume& v);

// Slab mean over k consecutive slices: out slice j = mean of in slices
// [k*j, k*j + k). Depth spacing scales by k.
Volume slab_mean_downsample(const Volume& v, std::int64_t k);

// Pseudo low-resolution ladder: emits the downsampled volume for every integer
// factor k = 2, 3, ... while k * spacing stays within max_thickness_mm and
// floor(D / k) stays at or above min_slices.
std::vector<Volume> make_pseudo_lr(const Volume& v, double max_thickness_mm = 3.0, std::int64_t min_slices = 130);

// The factor set make_pseudo_lr would emit, for reporting.
std::vector<std::int64_t> pseudo_lr_factors(std::int64_t depth, double spacing_mm, double max_thickness_mm = 3.0,
                                            std::int64_t min_slices = 130);

// ---------------------------------------------------------------------------
// training patches
// ---------------------------------------------------------------------------

struct PatchSpec {
    std::int64_t depth = 4;
    std::int64_t height = 32;
    std::int64_t width = 32;
};

struct PatchProvenance {
    std::string volume_id;
    std::int64_t z0 = 0, y0 = 0, x0 = 0;
    bool flipped = false;
};

struct PatchPair {
    std::int64_t lr_depth = 0, hr_depth = 0, height = 0, width = 0;
    std::vector<float> lr;  // lr_depth x height x width
    std::vector<float> hr;  // hr_depth x height x width, hr_depth = r * lr_depth
    PatchProvenance provenance;
};

// Random in-plane crop applied identically to both volumes, depth-aligned so
// hr covers thin slices [r*z0, r*(z0 + depth)); one coin flip mirrors W on
// both or neither. Draw order: z0, y0, x0, flip. allow_flip=false skips the
// flip draw entirely.
PatchPair sample_patch_pair(const Volume& lr, const Volume& hr, const PatchSpec& patch, Rng& rng,
                            const std::string& volume_id = "", bool allow_flip = true);

// ---------------------------------------------------------------------------
// synthetic phantoms
// ---------------------------------------------------------------------------

struct Ellipsoid {
    std::array<double, 3> center_frac{0.5, 0.5, 0.5};  // fraction of each extent (z, y, x)
    std::array<double, 3> radius_mm{8.0, 8.0, 8.0};
    float intensity_hu = 0.0f;
};

struct PhantomSpec {
    std::uint64_t seed = 0;
    std::int64_t depth = 16, height = 64, width = 64;  // thin-volume dims
    std::array<double, 3> spacing_mm{1.0, 1.0, 1.0};   // thin spacing
    std::int64_t thick_factor = 4;                     // thick = slab mean over this many thin slices

    std::int64_t n_ellipsoids = 4;
    double ellipsoid_radius_min_mm = 4.0;
    double ellipsoid_radius_max_mm = 14.0;

    std::int64_t n_tubes = 2;
    double tube_radius_min_mm = 1.0;
    double tube_radius_max_mm = 3.0;
    double tube_z_scale = 0.3;  // shrinks the depth component of tube directions; low values keep tubes near-in-plane

    std::int64_t background_modes = 3;  // 0 = flat background
    double background_base_hu = -870.0;
    double background_amplitude_hu = 60.0;

    double noise_sigma_hu = 8.0;

    // Placed before any randomly sampled ellipsoids; used for pinned geometry.
    std::vector<Ellipsoid> fixed_ellipsoids;

    void validate() const;
};

// Deterministic CT-like pair: smooth background + ellipsoid "lobes" + tube
// "airways/vessels" + noise, and the thick-slab companion volume.
std::pair<Volume, Volume> generate_phantom(const PhantomSpec& spec);

// ---------------------------------------------------------------------------
// file format: line "VSRV1", one JSON header line, then D*H*W little-endian
// f32 voxels. Round trips are byte-exact.
// ---------------------------------------------------------------------------

inline constexpr const char* kVolumeMagic = "VSRV1";

void write_volume(const Volume& v, const std::string& path);
Volume read_volume(const std::string& path);

}  // namespace tvsr
