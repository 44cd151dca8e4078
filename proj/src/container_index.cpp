#include "mmsim/container_index.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mmsim/errors.hpp"

namespace mmsim {
namespace {

using Bytes = std::span<const std::uint8_t>;

// Upper bound on samples per track; keeps corrupt tables from driving huge
// allocations.
constexpr std::uint64_t kMaxSamples = 1ull << 22;

[[noreturn]] void malformed(const std::string& what) {
    throw ContainerError(ContainerError::Kind::MalformedBox, what);
}

[[noreturn]] void unsupported(const std::string& what) {
    throw ContainerError(ContainerError::Kind::UnsupportedFeature, what);
}

/// Bounds-checked big-endian cursor over one box payload.
class Reader {
public:
    Reader(Bytes data, std::string_view box) : data_(data), box_(box) {}

    std::size_t remaining() const { return data_.size() - pos_; }

    void skip(std::size_t n) {
        need(n);
        pos_ += n;
    }

    std::uint8_t u8() {
        need(1);
        return data_[pos_++];
    }

    std::uint16_t u16() {
        need(2);
        std::uint16_t v = static_cast<std::uint16_t>((data_[pos_] << 8) | data_[pos_ + 1]);
        pos_ += 2;
        return v;
    }

    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v = (v << 8) | data_[pos_ + i];
        pos_ += 4;
        return v;
    }

    std::uint64_t u64() {
        const std::uint64_t hi = u32();
        return (hi << 32) | u32();
    }

    std::string fourcc() {
        need(4);
        std::string s(reinterpret_cast<const char*>(data_.data() + pos_), 4);
        pos_ += 4;
        return s;
    }

    /// Version/flags word of a full box; returns the version.
    std::uint8_t full_box() {
        const auto v = u8();
        skip(3);
        return v;
    }

    /// Checks that `count` entries of `entry_size` bytes fit in the payload.
    void expect_entries(std::uint64_t count, std::size_t entry_size) {
        if (count > remaining() / entry_size) {
            malformed(std::string(box_) + ": entry count " + std::to_string(count) +
                      " exceeds box size");
        }
    }

private:
    void need(std::size_t n) const {
        if (n > remaining()) malformed(std::string(box_) + ": truncated payload");
    }

    Bytes data_;
    std::string_view box_;
    std::size_t pos_ = 0;
};

struct Box {
    std::string type;
    Bytes payload;
};

/// Splits a container payload into its child boxes. Every declared size is
/// checked against the enclosing range.
std::vector<Box> children(Bytes data, std::string_view parent) {
    std::vector<Box> out;
    std::size_t off = 0;
    while (off < data.size()) {
        if (data.size() - off < 8) {
            malformed(std::string(parent) + ": trailing bytes shorter than a box header");
        }
        Reader hdr(data.subspan(off), parent);
        std::uint64_t size = hdr.u32();
        std::string type = hdr.fourcc();
        std::size_t header = 8;
        if (size == 1) {
            size = hdr.u64();
            header = 16;
        } else if (size == 0) {
            size = data.size() - off;
        }
        if (size < header) malformed("box '" + type + "' declares size smaller than its header");
        if (size > data.size() - off) {
            malformed("box '" + type + "' extends past the end of '" + std::string(parent) + "'");
        }
        out.push_back({type, data.subspan(off + header, static_cast<std::size_t>(size - header))});
        off += static_cast<std::size_t>(size);
    }
    return out;
}

const Box* find(const std::vector<Box>& boxes, std::string_view type) {
    for (const auto& b : boxes) {
        if (b.type == type) return &b;
    }
    return nullptr;
}

struct SttsEntry {
    std::uint32_t count;
    std::uint32_t delta;
};

struct CttsEntry {
    std::uint32_t count;
    std::int64_t offset;
};

struct TrackTables {
    std::string handler;
    std::uint32_t timescale = 0;
    std::uint32_t width = 0;
    std::uint32_t height = 0;
    std::string sample_entry;
    std::vector<SttsEntry> stts;
    std::vector<CttsEntry> ctts;
    std::optional<std::vector<std::uint32_t>> stss;
    std::optional<std::uint64_t> stsz_count;
    std::int64_t edit_shift = 0;
    bool has_stbl = false;
};

void parse_tkhd(Bytes payload, TrackTables& t) {
    Reader r(payload, "tkhd");
    const auto version = r.full_box();
    r.skip(version == 1 ? 32 : 20);  // times, track id, reserved, duration
    r.skip(8 + 2 + 2 + 2 + 2 + 36);  // reserved, layer, group, volume, reserved, matrix
    const auto w = r.u32();
    const auto h = r.u32();
    if (t.width == 0) t.width = w >> 16;
    if (t.height == 0) t.height = h >> 16;
}

void parse_elst(Bytes payload, TrackTables& t) {
    Reader r(payload, "elst");
    const auto version = r.full_box();
    const auto count = r.u32();
    const std::size_t entry = version == 1 ? 20 : 12;
    r.expect_entries(count, entry);
    for (std::uint32_t i = 0; i < count; ++i) {
        std::int64_t media_time;
        if (version == 1) {
            r.skip(8);
            media_time = static_cast<std::int64_t>(r.u64());
        } else {
            r.skip(4);
            media_time = static_cast<std::int32_t>(r.u32());
        }
        r.skip(4);
        if (media_time >= 0) {  // -1 marks an empty edit
            if (media_time > (std::int64_t{1} << 48)) malformed("elst: media time out of range");
            t.edit_shift = media_time;
            return;
        }
    }
}

void parse_stsd(Bytes payload, TrackTables& t) {
    Reader r(payload, "stsd");
    r.full_box();
    const auto count = r.u32();
    if (count == 0) malformed("stsd: no sample entries");
    const auto size = r.u32();
    t.sample_entry = r.fourcc();
    if (size < 8 || size - 8 > r.remaining()) malformed("stsd: sample entry size out of range");
    if (t.handler == "vide" && size >= 8 + 8 + 16 + 4) {
        r.skip(6 + 2);   // reserved, data_reference_index
        r.skip(2 + 2 + 12);  // pre_defined, reserved, pre_defined
        t.width = r.u16();
        t.height = r.u16();
    }
}

void parse_stbl(Bytes payload, TrackTables& t) {
    t.has_stbl = true;
    for (const auto& box : children(payload, "stbl")) {
        if (box.type == "stsd") {
            parse_stsd(box.payload, t);
        } else if (box.type == "stts") {
            Reader r(box.payload, "stts");
            r.full_box();
            const auto count = r.u32();
            r.expect_entries(count, 8);
            t.stts.reserve(count);
            for (std::uint32_t i = 0; i < count; ++i) {
                const auto n = r.u32();
                t.stts.push_back({n, r.u32()});
            }
        } else if (box.type == "ctts") {
            Reader r(box.payload, "ctts");
            const auto version = r.full_box();
            const auto count = r.u32();
            r.expect_entries(count, 8);
            t.ctts.reserve(count);
            for (std::uint32_t i = 0; i < count; ++i) {
                const auto n = r.u32();
                const auto raw = r.u32();
                const std::int64_t off = version == 0 ? static_cast<std::int64_t>(raw)
                                                      : static_cast<std::int32_t>(raw);
                t.ctts.push_back({n, off});
            }
        } else if (box.type == "stss") {
            Reader r(box.payload, "stss");
            r.full_box();
            const auto count = r.u32();
            r.expect_entries(count, 4);
            std::vector<std::uint32_t> sync(count);
            for (auto& s : sync) s = r.u32();
            t.stss = std::move(sync);
        } else if (box.type == "stsz") {
            Reader r(box.payload, "stsz");
            r.full_box();
            const auto sample_size = r.u32();
            const auto count = r.u32();
            if (sample_size == 0) r.expect_entries(count, 4);
            t.stsz_count = count;
        } else if (box.type == "stz2") {
            Reader r(box.payload, "stz2");
            r.full_box();
            r.skip(3);
            const auto field = r.u8();
            const auto count = r.u32();
            if (field != 4 && field != 8 && field != 16) malformed("stz2: bad field size");
            if (static_cast<std::uint64_t>(count) * field > static_cast<std::uint64_t>(r.remaining()) * 8) {
                malformed("stz2: entry count exceeds box size");
            }
            t.stsz_count = count;
        }
    }
}

TrackTables parse_trak(Bytes payload) {
    TrackTables t;
    const auto boxes = children(payload, "trak");
    // mdia first so the handler type is known when stsd is read
    if (const auto* mdia = find(boxes, "mdia")) {
        const auto mb = children(mdia->payload, "mdia");
        if (const auto* hdlr = find(mb, "hdlr")) {
            Reader r(hdlr->payload, "hdlr");
            r.full_box();
            r.skip(4);
            t.handler = r.fourcc();
        }
        if (const auto* mdhd = find(mb, "mdhd")) {
            Reader r(mdhd->payload, "mdhd");
            const auto version = r.full_box();
            r.skip(version == 1 ? 16 : 8);
            t.timescale = r.u32();
        }
        if (const auto* minf = find(mb, "minf")) {
            const auto fb = children(minf->payload, "minf");
            if (const auto* stbl = find(fb, "stbl")) parse_stbl(stbl->payload, t);
        }
    }
    if (const auto* tkhd = find(boxes, "tkhd")) parse_tkhd(tkhd->payload, t);
    if (const auto* edts = find(boxes, "edts")) {
        if (const auto* elst = find(children(edts->payload, "edts"), "elst")) {
            parse_elst(elst->payload, t);
        }
    }
    return t;
}

Codec codec_of(const std::string& entry) {
    if (entry == "avc1" || entry == "avc3") return Codec::H264;
    if (entry == "hvc1" || entry == "hev1") return Codec::H265;
    if (entry == "vp09") return Codec::VP9;
    return Codec::Other;
}

VideoMeta build_meta(const TrackTables& t) {
    if (t.timescale == 0) malformed("mdhd: timescale is zero");

    std::uint64_t stts_total = 0;
    for (const auto& e : t.stts) stts_total += e.count;
    if (stts_total > kMaxSamples) malformed("stts: implausible sample count");
    if (!t.stsz_count) malformed("stbl: no stsz or stz2 box");
    const std::uint64_t count = *t.stsz_count;
    if (count != stts_total) {
        malformed("stts covers " + std::to_string(stts_total) + " samples but stsz declares " +
                  std::to_string(count));
    }

    std::vector<std::int64_t> pts;
    pts.reserve(static_cast<std::size_t>(count));
    std::int64_t dts = 0;
    for (const auto& e : t.stts) {
        for (std::uint32_t i = 0; i < e.count; ++i) {
            pts.push_back(dts);
            dts += e.delta;
        }
    }
    if (!t.ctts.empty()) {
        std::uint64_t ctts_total = 0;
        for (const auto& e : t.ctts) ctts_total += e.count;
        if (ctts_total != count) malformed("ctts does not cover every sample");
        std::size_t s = 0;
        for (const auto& e : t.ctts) {
            for (std::uint32_t i = 0; i < e.count; ++i) pts[s++] += e.offset;
        }
    }
    for (auto& p : pts) p -= t.edit_shift;

    std::vector<std::uint32_t> order(pts.size());
    std::iota(order.begin(), order.end(), 0u);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::uint32_t a, std::uint32_t b) { return pts[a] < pts[b]; });
    std::vector<std::uint32_t> rank(pts.size());
    VideoMeta meta;
    meta.frame_pts.resize(pts.size());
    for (std::uint32_t r = 0; r < order.size(); ++r) {
        rank[order[r]] = r;
        meta.frame_pts[r] = pts[order[r]];
        if (r > 0 && meta.frame_pts[r] == meta.frame_pts[r - 1]) {
            malformed("duplicate presentation timestamp " + std::to_string(meta.frame_pts[r]));
        }
    }

    if (t.stss) {
        std::uint32_t prev = 0;
        for (auto s : *t.stss) {
            if (s == 0 || s > count || s <= prev) malformed("stss: sample number out of order or range");
            prev = s;
            meta.keyframe_indices.push_back(rank[s - 1]);
        }
        std::sort(meta.keyframe_indices.begin(), meta.keyframe_indices.end());
        // Frames presented before the first sync sample are folded into GOP 0.
        if (meta.keyframe_indices.empty() || meta.keyframe_indices.front() != 0) {
            meta.keyframe_indices.insert(meta.keyframe_indices.begin(), 0u);
        }
    } else {
        meta.keyframe_indices.resize(pts.size());
        std::iota(meta.keyframe_indices.begin(), meta.keyframe_indices.end(), 0u);
    }

    meta.codec = codec_of(t.sample_entry);
    meta.timescale = t.timescale;
    meta.width = t.width;
    meta.height = t.height;
    return meta;
}

}  // namespace

VideoMeta parse_container(std::span<const std::uint8_t> bytes) {
    const auto top = children(bytes, "file");
    for (const auto& box : top) {
        if (box.type == "moof" || box.type == "mfra") unsupported("fragmented MP4 is not supported");
    }
    const auto* moov = find(top, "moov");
    if (moov == nullptr) malformed("no moov box");

    const auto boxes = children(moov->payload, "moov");
    if (find(boxes, "mvex") != nullptr) unsupported("fragmented MP4 (mvex) is not supported");

    for (const auto& box : boxes) {
        if (box.type != "trak") continue;
        const auto tables = parse_trak(box.payload);
        if (tables.handler != "vide" || !tables.has_stbl) continue;
        auto meta = build_meta(tables);
        if (meta.frame_pts.empty()) continue;
        return meta;
    }
    throw ContainerError(ContainerError::Kind::NoVideoTrack, "no video track with samples");
}

VideoMeta parse_container_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse_container(bytes);
}

}  // namespace mmsim
