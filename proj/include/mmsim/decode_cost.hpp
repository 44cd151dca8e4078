#pragma once

#include <map>
#include <utility>

#include "mmsim/video_meta.hpp"

namespace mmsim {

/// Simulated cost of hardware (or CPU) video decoding. All values are seconds.
struct DecodeCostModel {
    std::map<std::pair<Codec, ResolutionClass>, double> per_frame_cost;
    std::map<Codec, double> seek_cost;
    double engine_init_cost = 0.0;
    /// Startup delay of one decode worker; starts on a GPU are serialized.
    double worker_init_serialization = 0.0;
    /// Multiplicative noise on segment durations: d * (1 + jitter * u), u in [-1, 1).
    double jitter = 0.0;
    /// Fallback when a (codec, resolution) pair has no entry.
    double default_frame_cost = 0.002;

    double frame_cost(Codec codec, ResolutionClass rc) const;
    double seek(Codec codec) const;

    /// Throws ConfigError if any cost is negative or the H.264 seek cost
    /// leaves [0.05, 0.1] s.
    void validate() const;

    /// Frozen NVDEC calibration (A100-class GPU, 5 engines).
    static DecodeCostModel calibrated_nvdec();
    /// Frozen single-stream CPU decoder calibration used by baseline pipelines.
    static DecodeCostModel calibrated_cpu();
    /// Pure linear model: every frame costs `frame_cost`, nothing else.
    static DecodeCostModel linear(double frame_cost);

    bool operator==(const DecodeCostModel&) const = default;
};

}  // namespace mmsim
