#pragma once

#include <cstdint>
#include <filesystem>
#include <span>

#include "mmsim/video_meta.hpp"

namespace mmsim {

/// Reads the moov box of an ISO-BMFF file and returns the first video
/// track's frame timeline. Sample payloads are never touched.
///
/// Throws ContainerError (MalformedBox, NoVideoTrack, UnsupportedFeature).
VideoMeta parse_container(std::span<const std::uint8_t> bytes);

VideoMeta parse_container_file(const std::filesystem::path& path);

}  // namespace mmsim
