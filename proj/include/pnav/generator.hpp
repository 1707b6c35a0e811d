#pragma once

// Differentiable pose-aware image generator and the image discrepancy loss.
//
// The simulator renders a textured cuboid: latent code z perturbs half-extents,
// per-face albedo and base colour through a fixed linear map; the pose rotates
// (see geometry.hpp for the Euler order), scales by exp(scale) and shifts the
// cuboid under orthographic projection. Each face contributes a soft coverage
//   cov_f(p) = facing_f * prod_edges sigmoid(-d_e(p) / tau)
// where d_e is the signed distance of pixel p to the projected edge line
// (negative inside). This is the usual smooth stand-in for sigmoid(-sdf / tau)
// of a convex polygon; it agrees with it away from corners. Faces are blended by
// coverage-weighted softmax over view depth (temperature beta), and the object
// is composited over a constant background with alpha = 1 - prod_f(1 - cov_f).
//
// Coordinates: u runs right, v runs down, both in fractions of the image size
// with the image centre at (0, 0). Object y is up, z points at the camera.

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "pnav/autodiff.hpp"
#include "pnav/geometry.hpp"

namespace pnav {

inline constexpr std::size_t kLatentDim = 16;
inline constexpr std::size_t kStateDim = 6 + kLatentDim;  // theta(3) + t(3) + z(16)

struct LatentCode {
    std::array<double, kLatentDim> z{};

    LatentCode() = default;
    explicit LatentCode(const std::array<double, kLatentDim>& v) {
        for (std::size_t i = 0; i < kLatentDim; ++i) z[i] = std::clamp(v[i], -3.0, 3.0);
    }
    double operator[](std::size_t i) const { return z[i]; }
    friend bool operator==(const LatentCode&, const LatentCode&) = default;
};

struct PoseState {
    EulerPose theta;
    Translation t;
    LatentCode z;

    /// Flat layout [azimuth, elevation, inplane, tx, ty, scale, z0..z15].
    [[nodiscard]] std::array<double, kStateDim> to_vector() const {
        std::array<double, kStateDim> v{theta.azimuth, theta.elevation, theta.inplane, t.tx, t.ty, t.scale};
        for (std::size_t i = 0; i < kLatentDim; ++i) v[6 + i] = z[i];
        return v;
    }
    /// Inverse of to_vector; wraps angles and clamps the rest.
    static PoseState from_vector(std::span<const double> v) {
        PoseState s;
        s.theta = EulerPose(v[0], v[1], v[2]);
        s.t = Translation(v[3], v[4], v[5]);
        std::array<double, kLatentDim> z{};
        for (std::size_t i = 0; i < kLatentDim; ++i) z[i] = v[6 + i];
        s.z = LatentCode(z);
        return s;
    }
    friend bool operator==(const PoseState&, const PoseState&) = default;
};

/// Channel-major (3 x height x width) image with values in [0, 1].
struct Image {
    std::size_t width = 64;
    std::size_t height = 64;
    std::vector<double> values;

    Image() = default;
    Image(std::size_t w, std::size_t h, double fill = 0.0) : width(w), height(h), values(3 * w * h, fill) {}

    double& at(std::size_t c, std::size_t y, std::size_t x) { return values[(c * height + y) * width + x]; }
    [[nodiscard]] double at(std::size_t c, std::size_t y, std::size_t x) const {
        return values[(c * height + y) * width + x];
    }
    [[nodiscard]] ad::Array to_array() const { return ad::Array(ad::Shape{3, height, width}, values); }
    static Image from_array(const ad::Array& a) {
        Image img(a.dim(2), a.dim(1));
        img.values = a.storage();
        return img;
    }
    friend bool operator==(const Image&, const Image&) = default;
};

/// Precomputed constant tensors shared by every render at one resolution.
struct RenderConstants {
    ad::Array vertex_signs;             // [8,3]
    ad::Array face_normals;             // [6,3]
    std::array<ad::Array, 4> corner_of; // [6,8] one-hot selectors, CCW from outside
    ad::Array face_centre;              // [6,8] averaging selector
    ad::Array pixel_grid;               // [3,N] rows (u, v, 1)
    friend bool operator==(const RenderConstants&, const RenderConstants&) = default;
};

struct GeneratorSpec {
    std::string category;
    std::optional<Vec3> symmetry_axis;
    Vec3 light_dir{0.4, 0.7, 0.6};
    double softness = 1.5;   // tau, pixels
    double depth_temp = 25.0;  // beta, per unit of normalized depth
    double background = 0.05;
    double ambient = 0.3;
    std::size_t width = 64;
    std::size_t height = 64;
    double extent_gain = 0.08;  // latent deltas scale log half-extents by this
    double albedo_gain = 0.2;   // ... and albedo / colour logits by these
    double colour_gain = 0.2;
    Vec3 half_extents{0.2, 0.12, 0.12};    // fractions of image width
    std::array<double, 6> face_albedo{};   // +x, -x, +y, -y, +z, -z
    Vec3 base_color{0.8, 0.8, 0.8};
    ad::Array latent_map;                  // [12,16]: 3 extent, 6 albedo, 3 colour deltas
    RenderConstants constants;
    friend bool operator==(const GeneratorSpec&, const GeneratorSpec&) = default;
};

class UnknownCategory : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

namespace detail {

inline RenderConstants build_render_constants(std::size_t width, std::size_t height) {
    RenderConstants c;
    c.vertex_signs = ad::Array({8, 3});
    for (std::size_t i = 0; i < 8; ++i) {
        c.vertex_signs.at(i, 0) = (i & 4) ? 1.0 : -1.0;
        c.vertex_signs.at(i, 1) = (i & 2) ? 1.0 : -1.0;
        c.vertex_signs.at(i, 2) = (i & 1) ? 1.0 : -1.0;
    }
    // Face normal and tangent pair (u x v = n) so the corners below run CCW seen from outside.
    const std::array<std::array<Vec3, 3>, 6> frames{{
        {{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}},
        {{{-1, 0, 0}, {0, 0, 1}, {0, 1, 0}}},
        {{{0, 1, 0}, {0, 0, 1}, {1, 0, 0}}},
        {{{0, -1, 0}, {1, 0, 0}, {0, 0, 1}}},
        {{{0, 0, 1}, {1, 0, 0}, {0, 1, 0}}},
        {{{0, 0, -1}, {0, 1, 0}, {1, 0, 0}}},
    }};
    const std::array<std::array<double, 2>, 4> corner_uv{{{-1, -1}, {1, -1}, {1, 1}, {-1, 1}}};
    c.face_normals = ad::Array({6, 3});
    for (auto& m : c.corner_of) m = ad::Array({6, 8});
    c.face_centre = ad::Array({6, 8});
    for (std::size_t f = 0; f < 6; ++f) {
        const auto& [n, u, v] = frames[f];
        for (std::size_t d = 0; d < 3; ++d) c.face_normals.at(f, d) = n[d];
        for (std::size_t k = 0; k < 4; ++k) {
            std::size_t idx = 0;
            for (std::size_t d = 0; d < 3; ++d) {
                const double s = n[d] + corner_uv[k][0] * u[d] + corner_uv[k][1] * v[d];
                if (s > 0) idx |= std::size_t{4} >> d;
            }
            c.corner_of[k].at(f, idx) = 1.0;
            c.face_centre.at(f, idx) = 0.25;
        }
    }
    const std::size_t n = width * height;
    c.pixel_grid = ad::Array({3, n});
    for (std::size_t y = 0; y < height; ++y)
        for (std::size_t x = 0; x < width; ++x) {
            const std::size_t p = y * width + x;
            c.pixel_grid.at(0, p) = (static_cast<double>(x) + 0.5) / static_cast<double>(width) - 0.5;
            c.pixel_grid.at(1, p) = (static_cast<double>(y) + 0.5) / static_cast<double>(height) - 0.5;
            c.pixel_grid.at(2, p) = 1.0;
        }
    return c;
}

inline ad::Array seeded_latent_map(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n01;
    ad::Array m({12, kLatentDim});
    for (double& v : m.data()) v = n01(rng) / std::sqrt(static_cast<double>(kLatentDim));
    return m;
}

inline double logit(double p) { return std::log(p / (1.0 - p)); }

}  // namespace detail

/// Bumped whenever a change to rendering alters output pixels; PPM golden
/// checksums are keyed by it.
inline constexpr std::string_view kRendererVersion = "1";

/// Builds one of the built-in categories: "car" (elongated, every face distinct),
/// "box" (front and back share an albedo, so a half-turn in azimuth is a strong
/// local minimum), "bottle" (tall, identical side faces, symmetric about y).
inline GeneratorSpec make_generator(const std::string& category, std::size_t width = 64, std::size_t height = 64) {
    GeneratorSpec s;
    s.category = category;
    s.width = width;
    s.height = height;
    std::uint64_t seed = 0;
    if (category == "car") {
        s.half_extents = {0.26, 0.10, 0.13};
        s.face_albedo = {0.90, 0.30, 0.65, 0.15, 0.50, 0.78};
        s.base_color = {0.95, 0.55, 0.45};
        seed = 0xCA5;
    } else if (category == "box") {
        s.half_extents = {0.20, 0.14, 0.14};
        s.face_albedo = {0.92, 0.25, 0.55, 0.15, 0.62, 0.64};
        s.base_color = {0.65, 0.80, 0.95};
        seed = 0xB0C;
    } else if (category == "bottle") {
        s.half_extents = {0.10, 0.26, 0.10};
        s.face_albedo = {0.60, 0.60, 0.90, 0.20, 0.60, 0.60};
        s.base_color = {0.55, 0.90, 0.60};
        s.symmetry_axis = Vec3{0, 1, 0};
        seed = 0xB07;
    } else {
        throw UnknownCategory("unknown category '" + category + "' (expected car, box or bottle)");
    }
    s.latent_map = pnav::detail::seeded_latent_map(seed);
    // Albedo rows tied together keep the texture symmetry for every latent code.
    auto tie_rows = [&](std::size_t dst, std::size_t src) {
        for (std::size_t j = 0; j < kLatentDim; ++j) s.latent_map.at(dst, j) = s.latent_map.at(src, j);
    };
    if (category == "box") tie_rows(3 + 5, 3 + 4);
    if (category == "bottle") {
        tie_rows(3 + 1, 3 + 0);
        tie_rows(3 + 4, 3 + 0);
        tie_rows(3 + 5, 3 + 0);
        for (std::size_t j = 0; j < kLatentDim; ++j) s.latent_map.at(2, j) = s.latent_map.at(0, j);
    }
    const double len = std::hypot(s.light_dir[0], s.light_dir[1], s.light_dir[2]);
    for (auto& v : s.light_dir) v /= len;
    s.constants = pnav::detail::build_render_constants(width, height);
    return s;
}

/// Differentiable render of a flat [22] state vector; returns [3,H,W].
inline ad::Var render(ad::Tape& tape, const GeneratorSpec& spec, const ad::Var& state) {
    using namespace ad;
    const RenderConstants& k = spec.constants;
    const std::size_t n = spec.width * spec.height;
    auto scalar_at = [&](std::size_t i) { return slice(state, {i}, {i + 1}); };
    const Var az = scalar_at(0), el = scalar_at(1), ip = scalar_at(2);
    const Var tx = scalar_at(3), ty = scalar_at(4), sc = scalar_at(5);
    const Var z = reshape(slice(state, {6}, {kStateDim}), {kLatentDim, 1});

    // Latent deltas.
    const Var deltas = matmul(tape.constant(spec.latent_map), z);  // [12,1]
    const Var ext_delta = reshape(slice(deltas, {0, 0}, {3, 1}), {1, 3});
    const Var alb_delta = slice(deltas, {3, 0}, {9, 1});           // [6,1]
    const Var col_delta = reshape(slice(deltas, {9, 0}, {12, 1}), {1, 3});

    Array base_ext({1, 3});
    Array alb_logit({6, 1});
    Array col_logit({1, 3});
    for (std::size_t d = 0; d < 3; ++d) {
        base_ext[d] = spec.half_extents[d];
        col_logit[d] = pnav::detail::logit(spec.base_color[d]);
    }
    for (std::size_t f = 0; f < 6; ++f) alb_logit[f] = pnav::detail::logit(spec.face_albedo[f]);
    const Var half = tape.constant(base_ext) * exp(ext_delta * spec.extent_gain);         // [1,3]
    const Var albedo = sigmoid(tape.constant(alb_logit) + alb_delta * spec.albedo_gain);       // [6,1]
    const Var colour = sigmoid(tape.constant(col_logit) + col_delta * spec.colour_gain);       // [1,3]

    // Rotation R = Rz(ip) Rx(el) Ry(az); we need R^T for row-vector products.
    const Var zero = tape.constant(Array({1}, 0.0)), one = tape.constant(Array({1}, 1.0));
    const Var ca = cos(az), sa = sin(az), ce = cos(el), se = sin(el), ci = cos(ip), si = sin(ip);
    auto mat3 = [&](std::vector<Var> entries) { return reshape(concat(entries, 0), {3, 3}); };
    const Var ry = mat3({ca, zero, sa, zero, one, zero, -sa, zero, ca});
    const Var rx = mat3({one, zero, zero, zero, ce, -se, zero, se, ce});
    const Var rz = mat3({ci, -si, zero, si, ci, zero, zero, zero, one});
    const Var rot_t = transpose(matmul(rz, matmul(rx, ry)));

    // Vertices and normals in camera frame.
    const Var verts = matmul(tape.constant(k.vertex_signs) * half, rot_t);  // [8,3]
    const Var normals = matmul(tape.constant(k.face_normals), rot_t);      // [6,3]
    const Var gain = exp(sc);
    const Var pu = slice(verts, {0, 0}, {8, 1}) * gain + tx;
    const Var pv = -(slice(verts, {0, 1}, {8, 2}) * gain) + ty;
    const Var depth = slice(verts, {0, 2}, {8, 3}) * gain;

    // Edge line coefficients so that x = cu*u + cv*v + c1 is -signed_distance / tau.
    const double tau = spec.softness / static_cast<double>(spec.width);
    std::array<Var, 4> cu, cv;
    for (std::size_t e = 0; e < 4; ++e) {
        cu[e] = matmul(tape.constant(k.corner_of[e]), pu);
        cv[e] = matmul(tape.constant(k.corner_of[e]), pv);
    }
    std::vector<Var> coef_rows;
    for (std::size_t e = 0; e < 4; ++e) {
        const std::size_t nx = (e + 1) % 4;
        const Var ex = cu[nx] - cu[e], ey = cv[nx] - cv[e];
        const Var inv = 1.0 / tau / sqrt(square(ex) + square(ey) + 1e-8);
        // cross(P) = ex*(Pv - Av) - ey*(Pu - Au), negative inside a front-facing face.
        const Var a_u = ey * inv;
        const Var a_v = -(ex * inv);
        const Var a_1 = (ex * cv[e] - ey * cu[e]) * inv;
        coef_rows.push_back(concat({a_u, a_v, a_1}, 1));  // [6,3]
    }
    const Var coef = concat(coef_rows, 0);                                // [24,3]
    const Var edge_cov = sigmoid(matmul(coef, tape.constant(k.pixel_grid)));  // [24,N]
    auto edge_block = [&](std::size_t e) { return slice(edge_cov, {6 * e, 0}, {6 * e + 6, n}); };
    const Var nz = slice(normals, {0, 2}, {6, 3});
    const Var facing = sigmoid(nz * 20.0);                                 // [6,1]
    const Var cov = edge_block(0) * edge_block(1) * edge_block(2) * (edge_block(3) * facing);  // [6,N]

    // Shading and per-face colour.
    Array light({3, 1});
    for (std::size_t d = 0; d < 3; ++d) light[d] = spec.light_dir[d];
    const Var lambert = matmul(normals, tape.constant(light)) * 0.5 + 0.5;  // [6,1]
    const Var shade = lambert * (1.0 - spec.ambient) + spec.ambient;
    const Var face_col = (albedo * shade) * colour;                         // [6,3]

    // Depth-softmax blend (shift by the max is a constant and cancels in the ratio).
    const Var face_depth = matmul(tape.constant(k.face_centre), depth);     // [6,1]
    double dmax = -1e300;
    for (double d : face_depth.value().data()) dmax = std::max(dmax, d);
    const Var wdepth = exp((face_depth - dmax) * spec.depth_temp);         // [6,1]
    const Var wnum = cov * wdepth;                                          // [6,N]
    const Var den = sum(wnum, 0) + 1e-12;                                   // [1,N]
    const Var obj = matmul(transpose(face_col), wnum) / den;                // [3,N]

    const Var uncovered = 1.0 - cov;
    Var transmit = slice(uncovered, {0, 0}, {1, n});
    for (std::size_t f = 1; f < 6; ++f) transmit = transmit * slice(uncovered, {f, 0}, {f + 1, n});
    const Var alpha = 1.0 - transmit;                                       // [1,N]
    const Var img = (obj - spec.background) * alpha + spec.background;
    return reshape(clip(img, 0.0, 1.0), {3, spec.height, spec.width});
}

inline ad::Array state_array(const PoseState& s) {
    const auto v = s.to_vector();
    return ad::Array(ad::Shape{kStateDim}, std::vector<double>(v.begin(), v.end()));
}

/// Non-differentiable convenience render.
inline Image render(const GeneratorSpec& spec, const PoseState& s) {
    ad::Tape tape;
    return Image::from_array(render(tape, spec, tape.constant(state_array(s))).value());
}

// ---------------------------------------------------------------------------
// Image discrepancy loss: image pyramid plus a frozen random 3x3 filter bank.

inline constexpr std::size_t kPyramidLevels = 4;
inline constexpr std::size_t kFeatureFilters = 8;
inline constexpr double kFeatureWeight = 0.1;

inline const ad::Array& feature_bank() {
    static const ad::Array bank = [] {
        std::mt19937_64 rng(0xF1B7E5);
        std::normal_distribution<double> n01;
        ad::Array w({kFeatureFilters, 27});
        for (double& v : w.data()) v = n01(rng) / std::sqrt(27.0);
        return w;
    }();
    return bank;
}

/// L_p on tape. Both inputs are [3,H,W]; H and W divisible by 8.
inline ad::Var perceptual_loss(const ad::Var& a, const ad::Var& b) {
    using namespace ad;
    if (a.shape() != b.shape()) throw ShapeError("perceptual_loss: image dimensions differ");
    Var level = a - b;  // every stage below is linear, so work on the difference
    Var loss = mean(square(level));
    Var level1;
    for (std::size_t l = 1; l < kPyramidLevels; ++l) {
        level = avgpool2x2(level);
        if (l == 1) level1 = level;
        loss = loss + mean(square(level));
    }
    const std::size_t h = level1.shape()[1], w = level1.shape()[2];
    std::vector<Var> cols;
    cols.reserve(27);
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t dy = 0; dy < 3; ++dy)
            for (std::size_t dx = 0; dx < 3; ++dx)
                cols.push_back(reshape(slice(level1, {c, dy, dx}, {c + 1, dy + h - 2, dx + w - 2}),
                                       {1, (h - 2) * (w - 2)}));
    const Var patches = concat(cols, 0);  // [27, (h-2)(w-2)]
    const Var features = matmul(a.tape().constant(feature_bank()), patches);
    return loss + mean(square(features)) * kFeatureWeight;
}

inline double perceptual_loss(const Image& a, const Image& b) {
    if (a.width != b.width || a.height != b.height) throw ad::ShapeError("perceptual_loss: image dimensions differ");
    ad::Tape t;
    return perceptual_loss(t.constant(a.to_array()), t.constant(b.to_array())).value().item();
}

// ---------------------------------------------------------------------------
// State sampling.

struct SamplingRanges {
    double azimuth_lo = -kPi, azimuth_hi = kPi;
    double elevation_lo = -kPi / 6, elevation_hi = kPi / 3;
    double inplane_lo = -kPi / 12, inplane_hi = kPi / 12;
    double shift_lo = -0.15, shift_hi = 0.15;
    double scale_lo = -0.3, scale_hi = 0.3;
    double latent_std = 1.0;  // 0 disables latent sampling
};

template <class Rng>
PoseState sample_state(Rng& rng, const SamplingRanges& r = {}) {
    auto uni = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
    PoseState s;
    const double az = uni(r.azimuth_lo, r.azimuth_hi);
    const double el = uni(r.elevation_lo, r.elevation_hi);
    const double ip = uni(r.inplane_lo, r.inplane_hi);
    s.theta = EulerPose(az, el, ip);
    const double tx = uni(r.shift_lo, r.shift_hi);
    const double ty = uni(r.shift_lo, r.shift_hi);
    const double sc = uni(r.scale_lo, r.scale_hi);
    s.t = Translation(tx, ty, sc);
    std::array<double, kLatentDim> z{};
    std::normal_distribution<double> n01;
    for (auto& v : z) v = r.latent_std > 0 ? r.latent_std * n01(rng) : 0.0;
    s.z = LatentCode(z);
    return s;
}

/// Midpoint of every sampling range with z = 0.
inline PoseState mean_pose(const SamplingRanges& r = {}) {
    PoseState s;
    s.theta = EulerPose(0.5 * (r.azimuth_lo + r.azimuth_hi), 0.5 * (r.elevation_lo + r.elevation_hi),
                        0.5 * (r.inplane_lo + r.inplane_hi));
    s.t = Translation(0.5 * (r.shift_lo + r.shift_hi), 0.5 * (r.shift_lo + r.shift_hi),
                      0.5 * (r.scale_lo + r.scale_hi));
    return s;
}

// ---------------------------------------------------------------------------
// Binary PPM (P6, maxval 255), values rounded half-to-even.

inline std::string encode_ppm(const Image& img) {
    std::string out = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
    out.reserve(out.size() + 3 * img.width * img.height);
    for (std::size_t y = 0; y < img.height; ++y)
        for (std::size_t x = 0; x < img.width; ++x)
            for (std::size_t c = 0; c < 3; ++c) {
                const double v = std::clamp(img.at(c, y, x), 0.0, 1.0) * 255.0;
                out.push_back(static_cast<char>(static_cast<unsigned char>(std::nearbyint(v))));
            }
    return out;
}

inline void write_ppm(const std::filesystem::path& path, const Image& img) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
    const std::string bytes = encode_ppm(img);
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace pnav
