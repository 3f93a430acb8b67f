// Copyright Contributors to the surfelslam Project
// SPDX-License-Identifier: Apache-2.0
//
#include "surfelslam/io.hpp"

#include "surfelslam/errors.hpp"

#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <csetjmp>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <limits>
#include <memory>
#include <sstream>

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

namespace surfelslam {

namespace fs = std::filesystem;

namespace {

struct FileCloser {
    void operator()(std::FILE *f) const {
        if (f != nullptr) {
            std::fclose(f);
        }
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const fs::path &path, const char *mode) {
    FilePtr f(std::fopen(path.c_str(), mode));
    if (!f) {
        throw IoError("cannot open " + path.string());
    }
    return f;
}

void png_error_handler(png_structp png, png_const_charp) { std::longjmp(png_jmpbuf(png), 1); }
void png_warning_handler(png_structp, png_const_charp) {}

// Rows are 8- or 16-bit big-endian samples as libpng expects.
void write_png(const fs::path &path, int width, int height, int color_type, int bit_depth,
               const std::vector<std::uint8_t> &bytes) {
    FilePtr     f   = open_file(path, "wb");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_handler, png_warning_handler);
    png_infop   info = png != nullptr ? png_create_info_struct(png) : nullptr;
    if (info == nullptr) {
        png_destroy_write_struct(&png, nullptr);
        throw IoError("libpng initialisation failed");
    }
    const std::size_t stride = bytes.size() / static_cast<std::size_t>(height);
    std::vector<png_bytep> rows(static_cast<std::size_t>(height));
    for (int y = 0; y < height; ++y) {
        rows[y] = const_cast<png_bytep>(bytes.data() + static_cast<std::size_t>(y) * stride);
    }
    if (setjmp(png_jmpbuf(png)) != 0) {
        png_destroy_write_struct(&png, &info);
        throw IoError("failed to write " + path.string());
    }
    png_init_io(png, f.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), bit_depth, color_type,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

struct PngData {
    int                       width{0};
    int                       height{0};
    int                       color_type{0};
    int                       bit_depth{0};
    std::vector<std::uint8_t> bytes;
};

PngData read_png(const fs::path &path) {
    FilePtr     f   = open_file(path, "rb");
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_handler, png_warning_handler);
    png_infop   info = png != nullptr ? png_create_info_struct(png) : nullptr;
    if (info == nullptr) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw IoError("libpng initialisation failed");
    }
    PngData                out;
    std::vector<png_bytep> rows;
    if (setjmp(png_jmpbuf(png)) != 0) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("malformed PNG " + path.string());
    }
    png_init_io(png, f.get());
    png_read_info(png, info);
    out.width      = static_cast<int>(png_get_image_width(png, info));
    out.height     = static_cast<int>(png_get_image_height(png, info));
    out.color_type = png_get_color_type(png, info);
    out.bit_depth  = png_get_bit_depth(png, info);
    const std::size_t stride = png_get_rowbytes(png, info);
    out.bytes.resize(stride * static_cast<std::size_t>(out.height));
    rows.resize(static_cast<std::size_t>(out.height));
    for (int y = 0; y < out.height; ++y) {
        rows[y] = out.bytes.data() + static_cast<std::size_t>(y) * stride;
    }
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return out;
}

std::uint8_t to_u8(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

template <typename T>
void put(std::string &buf, T v) {
    char bytes[sizeof(T)];
    std::memcpy(bytes, &v, sizeof(T));
    buf.append(bytes, sizeof(T));
}

class Reader {
public:
    Reader(std::string data, std::string name) : data_(std::move(data)), name_(std::move(name)) {}

    template <typename T>
    T get() {
        if (pos_ + sizeof(T) > data_.size()) {
            throw IoError("unexpected end of " + name_);
        }
        T v;
        std::memcpy(&v, data_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }

    std::string line() {
        const auto end = data_.find('\n', pos_);
        if (end == std::string::npos) {
            throw IoError("unterminated header in " + name_);
        }
        std::string out = data_.substr(pos_, end - pos_);
        pos_            = end + 1;
        if (!out.empty() && out.back() == '\r') {
            out.pop_back();
        }
        return out;
    }

    bool at_end() const { return pos_ == data_.size(); }

private:
    std::string data_;
    std::string name_;
    std::size_t pos_{0};
};

const char *const kPlyDoubles[] = {"x",   "y",     "z",     "nx",    "ny",    "nz",    "sx",    "sy",    "opacity",
                                   "red", "green", "blue",  "rot_w", "rot_x", "rot_y", "rot_z", "confidence"};
const char *const kPlyInts[]    = {"kf_id", "submap_id"};

std::string fmt17(double v) {
    std::ostringstream s;
    s << std::setprecision(17) << v;
    return s.str();
}

} // namespace

// ---------------------------------------------------------------------------
// PNG

void write_png_rgb(const fs::path &path, const Image &rgb) {
    if (rgb.channels() != 3 || rgb.empty()) {
        throw IoError("RGB PNG needs a non-empty 3-channel image");
    }
    std::vector<std::uint8_t> bytes(rgb.data().size());
    std::transform(rgb.data().begin(), rgb.data().end(), bytes.begin(), to_u8);
    write_png(path, rgb.width(), rgb.height(), PNG_COLOR_TYPE_RGB, 8, bytes);
}

Image read_png_rgb(const fs::path &path) {
    const PngData d = read_png(path);
    if (d.color_type != PNG_COLOR_TYPE_RGB || d.bit_depth != 8) {
        throw IoError(path.string() + " is not an 8-bit RGB PNG");
    }
    Image out(d.width, d.height, 3);
    for (std::size_t k = 0; k < d.bytes.size(); ++k) {
        out.data()[k] = d.bytes[k] / 255.0;
    }
    return out;
}

Image quantize_rgb(const Image &rgb) {
    Image out = rgb;
    for (double &v : out.data()) {
        v = to_u8(v) / 255.0;
    }
    return out;
}

void write_png_depth(const fs::path &path, const Image &depth, double factor) {
    if (depth.channels() != 1 || depth.empty()) {
        throw IoError("depth PNG needs a non-empty 1-channel image");
    }
    if (!(factor > 0.0)) {
        throw IoError("depth factor must be positive");
    }
    std::vector<std::uint8_t> bytes(depth.data().size() * 2);
    for (std::size_t k = 0; k < depth.data().size(); ++k) {
        const double v = std::clamp(std::round(depth.data()[k] * factor), 0.0, 65535.0);
        const auto   u = static_cast<std::uint16_t>(v);
        bytes[2 * k]     = static_cast<std::uint8_t>(u >> 8);
        bytes[2 * k + 1] = static_cast<std::uint8_t>(u & 0xff);
    }
    write_png(path, depth.width(), depth.height(), PNG_COLOR_TYPE_GRAY, 16, bytes);
}

Image read_png_depth(const fs::path &path, double factor) {
    const PngData d = read_png(path);
    if (d.color_type != PNG_COLOR_TYPE_GRAY || d.bit_depth != 16) {
        throw IoError(path.string() + " is not a 16-bit grayscale PNG");
    }
    Image out(d.width, d.height, 1);
    for (std::size_t k = 0; k < out.data().size(); ++k) {
        const unsigned u = (static_cast<unsigned>(d.bytes[2 * k]) << 8) | d.bytes[2 * k + 1];
        out.data()[k]    = u / factor;
    }
    return out;
}

// ---------------------------------------------------------------------------
// PLY

void write_ply(const fs::path &path, const std::vector<Surfel> &surfels) {
    std::string buf;
    buf += "ply\nformat binary_little_endian 1.0\n";
    buf += "element vertex " + std::to_string(surfels.size()) + "\n";
    for (const char *name : kPlyDoubles) {
        buf += std::string("property double ") + name + "\n";
    }
    for (const char *name : kPlyInts) {
        buf += std::string("property int ") + name + "\n";
    }
    buf += "end_header\n";
    for (const Surfel &s : surfels) {
        const Vec3 n = s.normal();
        for (const double v : {s.mean.x(), s.mean.y(), s.mean.z(), n.x(), n.y(), n.z(), s.scale.x(), s.scale.y(),
                               s.opacity, s.color.x(), s.color.y(), s.color.z(), s.rotation.w(), s.rotation.x(),
                               s.rotation.y(), s.rotation.z(), s.confidence}) {
            put(buf, v);
        }
        put(buf, static_cast<std::int32_t>(s.keyframe_id));
        put(buf, static_cast<std::int32_t>(s.submap_id));
    }
    std::ofstream out(path, std::ios::binary);
    if (!out || !out.write(buf.data(), static_cast<std::streamsize>(buf.size()))) {
        throw IoError("cannot write " + path.string());
    }
}

std::vector<Surfel> read_ply(const fs::path &path) {
    Reader r(read_file(path), path.string());
    if (r.line() != "ply" || r.line() != "format binary_little_endian 1.0") {
        throw IoError(path.string() + " is not a binary little-endian PLY");
    }
    std::size_t              count = 0;
    bool                     have_count = false;
    std::vector<std::string> props;
    for (std::string l = r.line(); l != "end_header"; l = r.line()) {
        std::istringstream ls(l);
        std::string        word;
        ls >> word;
        if (word == "element") {
            std::string name;
            ls >> name >> count;
            if (name != "vertex" || !ls) {
                throw IoError(path.string() + ": unsupported element '" + l + "'");
            }
            have_count = true;
        } else if (word == "property") {
            std::string type;
            std::string name;
            ls >> type >> name;
            props.push_back(type + " " + name);
        } else if (word != "comment") {
            throw IoError(path.string() + ": unexpected header line '" + l + "'");
        }
    }
    std::vector<std::string> expected;
    for (const char *name : kPlyDoubles) {
        expected.push_back(std::string("double ") + name);
    }
    for (const char *name : kPlyInts) {
        expected.push_back(std::string("int ") + name);
    }
    if (!have_count || props != expected) {
        throw IoError(path.string() + ": vertex layout does not match the surfel format");
    }
    std::vector<Surfel> out(count);
    for (Surfel &s : out) {
        double v[17];
        for (double &x : v) {
            x = r.get<double>();
        }
        s.mean       = {v[0], v[1], v[2]};
        s.scale      = {v[6], v[7]};
        s.opacity    = v[8];
        s.color      = {v[9], v[10], v[11]};
        try {
            s.rotation = UnitQuaternion::from_normalized(v[12], v[13], v[14], v[15]);
        } catch (const DegenerateConfigurationError &) {
            throw IoError(path.string() + ": surfel rotation is not a unit quaternion");
        }
        s.confidence  = v[16];
        s.keyframe_id = r.get<std::int32_t>();
        s.submap_id   = r.get<std::int32_t>();
    }
    if (!r.at_end()) {
        throw IoError(path.string() + ": trailing bytes after vertex data");
    }
    return out;
}

// ---------------------------------------------------------------------------
// TUM

void write_tum(const fs::path &path, const std::vector<StampedPose> &poses, bool with_scale) {
    std::ofstream out(path);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    out << (with_scale ? "# timestamp s tx ty tz qx qy qz qw\n" : "# timestamp tx ty tz qx qy qz qw\n");
    for (const auto &p : poses) {
        const auto &t = p.pose.translation();
        const auto &q = p.pose.rotation();
        out << fmt17(p.timestamp);
        if (with_scale) {
            out << ' ' << fmt17(p.pose.scale());
        }
        for (const double v : {t.x(), t.y(), t.z(), q.x(), q.y(), q.z(), q.w()}) {
            out << ' ' << fmt17(v);
        }
        out << '\n';
    }
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
}

std::vector<StampedPose> read_tum(const fs::path &path, bool with_scale) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    std::vector<StampedPose> out;
    std::string              line;
    int                      lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') {
            continue;
        }
        std::istringstream ls(line);
        double             ts = 0.0;
        double             s  = 1.0;
        double             v[7];
        ls >> ts;
        if (with_scale) {
            ls >> s;
        }
        for (double &x : v) {
            ls >> x;
        }
        std::string extra;
        if (!ls || (ls >> extra)) {
            throw IoError(path.string() + ":" + std::to_string(lineno) + ": malformed trajectory line");
        }
        try {
            out.push_back({ts, Sim3Transform(s, UnitQuaternion::from_normalized(v[6], v[3], v[4], v[5]),
                                             Vec3(v[0], v[1], v[2]))});
        } catch (const DegenerateConfigurationError &e) {
            throw IoError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Predictions

void write_prediction(const fs::path &path, const FramePrediction &p) {
    if (p.attrs.size() != p.points_cam.size() || p.pixels.size() != p.points_cam.size()) {
        throw IoError("prediction attribute and point counts differ");
    }
    std::string buf;
    put(buf, static_cast<std::uint32_t>(p.frame_id));
    const auto &t = p.pose_in_submap.translation;
    const auto &q = p.pose_in_submap.rotation;
    for (const double v : {t.x(), t.y(), t.z(), q.x(), q.y(), q.z(), q.w()}) {
        put(buf, v);
    }
    put(buf, static_cast<std::uint32_t>(p.points_cam.size()));
    for (std::size_t k = 0; k < p.points_cam.size(); ++k) {
        const auto &a = p.attrs[k];
        for (const double v : {p.points_cam[k].x(), p.points_cam[k].y(), p.points_cam[k].z(), a.rotation.w(),
                               a.rotation.x(), a.rotation.y(), a.rotation.z(), a.scale.x(), a.scale.y(), a.opacity,
                               a.color.x(), a.color.y(), a.color.z(), a.confidence,
                               static_cast<double>(p.pixels[k])}) {
            put(buf, static_cast<float>(v));
        }
    }
    std::ofstream out(path, std::ios::binary);
    if (!out || !out.write(buf.data(), static_cast<std::streamsize>(buf.size()))) {
        throw IoError("cannot write " + path.string());
    }
}

FramePrediction read_prediction(const fs::path &path) {
    Reader          r(read_file(path), path.string());
    FramePrediction p;
    p.frame_id = static_cast<int>(r.get<std::uint32_t>());
    double v[7];
    for (double &x : v) {
        x = r.get<double>();
    }
    try {
        p.pose_in_submap = {UnitQuaternion::from_normalized(v[6], v[3], v[4], v[5]), Vec3(v[0], v[1], v[2])};
    } catch (const DegenerateConfigurationError &) {
        throw IoError(path.string() + ": pose rotation is not a unit quaternion");
    }
    const auto n = r.get<std::uint32_t>();
    for (std::uint32_t k = 0; k < n; ++k) {
        float f[15];
        for (float &x : f) {
            x = r.get<float>();
        }
        SurfelAttributes a;
        // Single precision loses the unit norm, so this one is renormalized.
        a.rotation   = UnitQuaternion(f[3], f[4], f[5], f[6]);
        a.scale      = {f[7], f[8]};
        a.opacity    = f[9];
        a.color      = {f[10], f[11], f[12]};
        a.confidence = f[13];
        p.points_cam.emplace_back(f[0], f[1], f[2]);
        p.attrs.push_back(a);
        p.pixels.push_back(static_cast<int>(f[14]));
    }
    if (!r.at_end()) {
        throw IoError(path.string() + ": trailing bytes after prediction data");
    }
    return p;
}

// ---------------------------------------------------------------------------
// Intrinsics and helpers

void write_intrinsics(const fs::path &path, const CameraIntrinsics &intr, double depth_factor) {
    std::ofstream out(path);
    out << "# fx fy cx cy width height depth_factor\n"
        << fmt17(intr.fx) << ' ' << fmt17(intr.fy) << ' ' << fmt17(intr.cx) << ' ' << fmt17(intr.cy) << ' '
        << intr.width << ' ' << intr.height << ' ' << fmt17(depth_factor) << '\n';
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
}

std::pair<CameraIntrinsics, double> read_intrinsics(const fs::path &path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') {
            continue;
        }
        std::istringstream ls(line);
        CameraIntrinsics   intr;
        double             factor = 0.0;
        ls >> intr.fx >> intr.fy >> intr.cx >> intr.cy >> intr.width >> intr.height >> factor;
        if (!ls || !(factor > 0.0)) {
            throw IoError(path.string() + ": malformed intrinsics line");
        }
        try {
            intr.validate();
        } catch (const ConfigError &e) {
            throw IoError(path.string() + ": " + e.what());
        }
        return {intr, factor};
    }
    throw IoError(path.string() + ": no intrinsics line");
}

std::string frame_name(int frame_id, const std::string &extension) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%06d", frame_id);
    return std::string(buf) + extension;
}

std::string read_file(const fs::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

} // namespace surfelslam
