#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "pisco/types.hpp"

namespace pisco {

inline constexpr double kPsnrCap = 100.0;

/// Linear-interpolated percentile (p in [0, 100]) of the entries.
inline double percentile(const RealImage& img, double p) {
    std::vector<double> v(img.data(), img.data() + img.size());
    if (v.empty()) throw InvalidArgument("percentile of an empty image");
    std::sort(v.begin(), v.end());
    const double pos = p / 100.0 * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

/// Clip at the 99th percentile, then min-max scale to [0, 1]. A constant
/// image (after clipping) maps to all zeros.
inline RealImage normalize_for_metrics(const RealImage& magnitude) {
    if (magnitude.size() == 0) throw InvalidArgument("normalize_for_metrics: empty image");
    const double clip = percentile(magnitude, 99.0);
    RealImage out = magnitude.cwiseMin(clip);
    const double lo = out.minCoeff(), hi = out.maxCoeff();
    if (!(hi > lo)) return RealImage::Zero(out.rows(), out.cols());
    return (out.array() - lo) / (hi - lo);
}

inline RealImage normalize_for_metrics(const ComplexImage& image) {
    return normalize_for_metrics(RealImage(image.cwiseAbs()));
}

/// PSNR of images already in [0, 1]: 10 log10(1 / MSE), capped.
inline double psnr_normalized(const RealImage& test, const RealImage& reference) {
    if (test.rows() != reference.rows() || test.cols() != reference.cols())
        throw InvalidArgument("psnr: image shapes differ");
    const double mse = (test - reference).squaredNorm() / static_cast<double>(test.size());
    if (mse < 1e-10) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

/// Both images are normalized independently before comparison.
inline double psnr(const ComplexImage& test, const ComplexImage& reference) {
    if (test.rows() != reference.rows() || test.cols() != reference.cols())
        throw InvalidArgument("psnr: image shapes differ");
    return psnr_normalized(normalize_for_metrics(test), normalize_for_metrics(reference));
}

/// Mean SSIM over all valid 8x8 Gaussian windows (sigma 1.5, K1 = 0.01,
/// K2 = 0.03, dynamic range 1), clamped to [0, 1].
inline double ssim_normalized(const RealImage& test, const RealImage& reference) {
    if (test.rows() != reference.rows() || test.cols() != reference.cols())
        throw InvalidArgument("ssim: image shapes differ");
    constexpr int kWin = 8;
    if (test.rows() < kWin || test.cols() < kWin) throw InvalidArgument("ssim: images must be at least 8x8");
    Eigen::Matrix<double, kWin, kWin> w;
    for (int i = 0; i < kWin; ++i)
        for (int j = 0; j < kWin; ++j) {
            const double di = i - (kWin - 1) / 2.0, dj = j - (kWin - 1) / 2.0;
            w(i, j) = std::exp(-(di * di + dj * dj) / (2.0 * 1.5 * 1.5));
        }
    w /= w.sum();
    constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    double total = 0.0;
    long count = 0;
    for (Eigen::Index y = 0; y + kWin <= test.cols(); ++y)
        for (Eigen::Index x = 0; x + kWin <= test.rows(); ++x) {
            const auto a = test.block<kWin, kWin>(x, y);
            const auto b = reference.block<kWin, kWin>(x, y);
            const double mu_a = (w.array() * a.array()).sum();
            const double mu_b = (w.array() * b.array()).sum();
            const double var_a = (w.array() * (a.array() - mu_a).square()).sum();
            const double var_b = (w.array() * (b.array() - mu_b).square()).sum();
            const double cov = (w.array() * (a.array() - mu_a) * (b.array() - mu_b)).sum();
            total += ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) /
                     ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
            ++count;
        }
    return std::clamp(total / static_cast<double>(count), 0.0, 1.0);
}

inline double ssim(const ComplexImage& test, const ComplexImage& reference) {
    if (test.rows() != reference.rows() || test.cols() != reference.cols())
        throw InvalidArgument("ssim: image shapes differ");
    return ssim_normalized(normalize_for_metrics(test), normalize_for_metrics(reference));
}

enum class ProfileAxis { XT, YT };

/// xt: the line y = index of each frame (length n_x); yt: the line x = index
/// (length n_y). Output column f holds frame f.
inline RealImage temporal_profile(std::span<const RealImage> frames, ProfileAxis axis, Eigen::Index index) {
    if (frames.size() < 2) throw InvalidArgument("temporal profile needs at least two frames");
    const Eigen::Index n_x = frames.front().rows(), n_y = frames.front().cols();
    for (const auto& f : frames)
        if (f.rows() != n_x || f.cols() != n_y) throw InvalidArgument("temporal profile: frame shapes differ");
    const Eigen::Index limit = axis == ProfileAxis::XT ? n_y : n_x;
    if (index < 0 || index >= limit) throw InvalidArgument("temporal profile: index out of range");
    const Eigen::Index len = axis == ProfileAxis::XT ? n_x : n_y;
    RealImage out(len, static_cast<Eigen::Index>(frames.size()));
    for (std::size_t f = 0; f < frames.size(); ++f) {
        if (axis == ProfileAxis::XT)
            out.col(static_cast<Eigen::Index>(f)) = frames[f].col(index);
        else
            out.col(static_cast<Eigen::Index>(f)) = frames[f].row(index).transpose();
    }
    return out;
}

struct MetricReport {
    std::vector<double> psnr;
    std::vector<double> ssim;
    double mean_psnr = 0.0;
    double mean_ssim = 0.0;
};

inline MetricReport evaluate_frames(std::span<const ComplexImage> tests, std::span<const ComplexImage> refs) {
    if (tests.size() != refs.size() || tests.empty())
        throw InvalidArgument("evaluate_frames: need matching, non-empty frame lists");
    MetricReport r;
    for (std::size_t i = 0; i < tests.size(); ++i) {
        r.psnr.push_back(psnr(tests[i], refs[i]));
        r.ssim.push_back(ssim(tests[i], refs[i]));
        r.mean_psnr += r.psnr.back();
        r.mean_ssim += r.ssim.back();
    }
    r.mean_psnr /= static_cast<double>(tests.size());
    r.mean_ssim /= static_cast<double>(tests.size());
    return r;
}

}  // namespace pisco
