#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string_view>

namespace ccmi {

/// Random stream used throughout. All randomness is drawn from streams of this
/// type created by derive_stream(); nothing reads ambient entropy.
using Rng = std::mt19937_64;

/// Stable 64-bit FNV-1a hash of a tag. Independent of the standard library's
/// std::hash so sub-stream seeds do not change across toolchains.
std::uint64_t stable_hash(std::string_view tag) noexcept;

/// Seed for the sub-stream named `tag` (optionally indexed) under `root_seed`.
/// Adding a new tag never perturbs the seeds of existing ones.
std::uint64_t derive_seed(std::uint64_t root_seed, std::string_view tag,
                          std::initializer_list<std::uint64_t> indices = {}) noexcept;

inline Rng derive_stream(std::uint64_t root_seed, std::string_view tag,
                         std::initializer_list<std::uint64_t> indices = {}) {
  return Rng(derive_seed(root_seed, tag, indices));
}

/// Uniform draw on [0, 1) with 53 random bits.
inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Uniform integer on [lo, hi].
inline std::uint64_t uniform_int(Rng& rng, std::uint64_t lo, std::uint64_t hi) {
  return std::uniform_int_distribution<std::uint64_t>(lo, hi)(rng);
}

namespace streams {
inline constexpr std::string_view kCalibrationUniforms = "calibration-uniforms";
inline constexpr std::string_view kObservationUniforms = "observation-uniforms";
inline constexpr std::string_view kMonteCarlo = "mc-calibration";
inline constexpr std::string_view kSyntheticCenters = "synthetic-centers";
inline constexpr std::string_view kSyntheticCalibration = "synthetic-calibration";
inline constexpr std::string_view kSyntheticTest = "synthetic-test";
inline constexpr std::string_view kGrouping = "grouping";
inline constexpr std::string_view kTrajectorySample = "trajectory-sample";
inline constexpr std::string_view kSyntheticExport = "synthetic-export";
}  // namespace streams

}  // namespace ccmi
