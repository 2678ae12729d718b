#include "mlpfseg/io.hpp"

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>
#include <vector>

#include "mlpfseg/errors.hpp"

namespace mlpfseg {

namespace {

// Guards header-driven allocations against corrupt dimension fields.
constexpr uint64_t kMaxElements = uint64_t{1} << 28;

bool ascii_cloud_path(const std::string& path) {
    const auto dot = path.rfind('.');
    if (dot == std::string::npos) return false;
    const std::string ext = path.substr(dot);
    return ext == ".txt" || ext == ".xyz";
}

class BinaryReader {
public:
    BinaryReader(const std::string& path, const char* expected_magic) : path_(path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw io_error(path + ": cannot open for reading");
        in.seekg(0, std::ios::end);
        const auto end = in.tellg();
        in.seekg(0, std::ios::beg);
        bytes_.resize(static_cast<size_t>(end));
        if (end > 0) in.read(reinterpret_cast<char*>(bytes_.data()), end);
        if (!in) throw io_error(path + ": read failed");

        char magic[5] = {0, 0, 0, 0, 0};
        if (bytes_.size() < 4) {
            std::ostringstream msg;
            msg << path << ": too short for a magic tag: expected 4 bytes, got " << bytes_.size();
            throw io_error(msg.str());
        }
        std::memcpy(magic, bytes_.data(), 4);
        if (std::string(magic) != expected_magic) {
            std::ostringstream msg;
            msg << path << ": bad magic: expected \"" << expected_magic << "\", found \"" << printable(magic)
                << "\"";
            throw io_error(msg.str());
        }
        offset_ = 4;
    }

    uint32_t read_u32(const char* what) {
        need(4, what);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(bytes_[offset_ + i]) << (8 * i);
        offset_ += 4;
        return v;
    }

    double read_f32(const char* what) {
        need(4, what);
        uint32_t bits = 0;
        for (int i = 0; i < 4; ++i) bits |= static_cast<uint32_t>(bytes_[offset_ + i]) << (8 * i);
        offset_ += 4;
        float f;
        std::memcpy(&f, &bits, 4);
        return static_cast<double>(f);
    }

    uint8_t read_u8(const char* what) {
        need(1, what);
        return bytes_[offset_++];
    }

    void need(size_t n, const char* what) const {
        if (offset_ + n > bytes_.size()) {
            std::ostringstream msg;
            msg << path_ << ": truncated while reading " << what << ": expected " << (offset_ + n)
                << " bytes, file holds " << bytes_.size();
            throw io_error(msg.str());
        }
    }

    void expect_payload(uint64_t remaining_bytes, const char* what) const {
        const uint64_t expected = offset_ + remaining_bytes;
        if (expected != bytes_.size()) {
            std::ostringstream msg;
            msg << path_ << ": " << what << " payload size mismatch: expected " << expected
                << " bytes total, file holds " << bytes_.size();
            throw io_error(msg.str());
        }
    }

private:
    static std::string printable(const char* magic) {
        std::string out;
        for (int i = 0; i < 4; ++i) {
            const unsigned char c = static_cast<unsigned char>(magic[i]);
            if (c >= 0x20 && c < 0x7f) {
                out.push_back(static_cast<char>(c));
            } else {
                char buf[8];
                std::snprintf(buf, sizeof(buf), "\\x%02x", c);
                out += buf;
            }
        }
        return out;
    }

    std::string path_;
    std::vector<uint8_t> bytes_;
    size_t offset_ = 0;
};

class BinaryWriter {
public:
    BinaryWriter(const std::string& path, const char* magic) : path_(path), out_(path, std::ios::binary) {
        if (!out_) throw io_error(path + ": cannot open for writing");
        out_.write(magic, 4);
    }

    void write_u32(uint32_t v) {
        char buf[4];
        for (int i = 0; i < 4; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
        out_.write(buf, 4);
    }

    void write_f32(double v) {
        const float f = static_cast<float>(v);
        uint32_t bits;
        std::memcpy(&bits, &f, 4);
        write_u32(bits);
    }

    void write_u8(uint8_t v) { out_.write(reinterpret_cast<const char*>(&v), 1); }

    void finish() {
        out_.flush();
        if (!out_) throw io_error(path_ + ": write failed");
    }

private:
    std::string path_;
    std::ofstream out_;
};

void check_dims(const std::string& path, std::initializer_list<std::pair<const char*, uint64_t>> dims) {
    uint64_t product = 1;
    for (const auto& [name, value] : dims) {
        if (value == 0) {
            std::ostringstream msg;
            msg << path << ": dimension " << name << " is 0, expected at least 1";
            throw io_error(msg.str());
        }
        product *= value;
        if (product > kMaxElements) {
            std::ostringstream msg;
            msg << path << ": header declares " << product << "+ elements, refusing (limit " << kMaxElements
                << ")";
            throw io_error(msg.str());
        }
    }
}

}  // namespace

PointCloud load_point_cloud(const std::string& path) {
    PointCloud cloud;
    if (ascii_cloud_path(path)) {
        std::ifstream in(path);
        if (!in) throw io_error(path + ": cannot open for reading");
        std::string line;
        int line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (line.empty() || line[0] == '#') continue;
            std::istringstream fields(line);
            std::array<double, 4> p{};
            if (!(fields >> p[0] >> p[1] >> p[2] >> p[3])) {
                std::ostringstream msg;
                msg << path << ":" << line_no << ": expected 4 numbers \"x y z r\", got \"" << line << "\"";
                throw io_error(msg.str());
            }
            std::string extra;
            if (fields >> extra) {
                std::ostringstream msg;
                msg << path << ":" << line_no << ": trailing token \"" << extra << "\" after 4 numbers";
                throw io_error(msg.str());
            }
            cloud.points.push_back(p);
        }
    } else {
        BinaryReader reader(path, "LFPC");
        const uint32_t count = reader.read_u32("point count");
        if (count > kMaxElements) {
            std::ostringstream msg;
            msg << path << ": header declares " << count << " points, refusing (limit " << kMaxElements << ")";
            throw io_error(msg.str());
        }
        reader.expect_payload(uint64_t{count} * 16, "point");
        cloud.points.resize(count);
        for (uint32_t i = 0; i < count; ++i) {
            for (int j = 0; j < 4; ++j) cloud.points[i][j] = reader.read_f32("point coordinates");
        }
    }
    cloud.check_finite();
    return cloud;
}

void save_point_cloud(const std::string& path, const PointCloud& cloud) {
    cloud.check_finite();
    if (ascii_cloud_path(path)) {
        std::ofstream out(path);
        if (!out) throw io_error(path + ": cannot open for writing");
        char buf[160];
        for (const auto& p : cloud.points) {
            std::snprintf(buf, sizeof(buf), "%.17g %.17g %.17g %.17g\n", p[0], p[1], p[2], p[3]);
            out << buf;
        }
        out.flush();
        if (!out) throw io_error(path + ": write failed");
        return;
    }
    BinaryWriter writer(path, "LFPC");
    writer.write_u32(static_cast<uint32_t>(cloud.points.size()));
    for (const auto& p : cloud.points) {
        for (int j = 0; j < 4; ++j) writer.write_f32(p[j]);
    }
    writer.finish();
}

FeatureMap load_feature_map(const std::string& path) {
    BinaryReader reader(path, "LFFM");
    const uint64_t c = reader.read_u32("channel count");
    const uint64_t h = reader.read_u32("height");
    const uint64_t w = reader.read_u32("width");
    check_dims(path, {{"channels", c}, {"height", h}, {"width", w}});
    reader.expect_payload(c * h * w * 4, "feature");
    FeatureMap map(static_cast<int>(c), static_cast<int>(h), static_cast<int>(w));
    for (double& v : map.data) v = reader.read_f32("feature values");
    map.all_finite(path.c_str());
    return map;
}

void save_feature_map(const std::string& path, const FeatureMap& map) {
    map.all_finite(path.c_str());
    BinaryWriter writer(path, "LFFM");
    writer.write_u32(static_cast<uint32_t>(map.channels));
    writer.write_u32(static_cast<uint32_t>(map.height));
    writer.write_u32(static_cast<uint32_t>(map.width));
    for (double v : map.data) writer.write_f32(v);
    writer.finish();
}

SparseGrid load_sparse_grid(const std::string& path) {
    BinaryReader reader(path, "LFSG");
    const uint64_t h = reader.read_u32("height");
    const uint64_t w = reader.read_u32("width");
    check_dims(path, {{"height", h}, {"width", w}});
    reader.expect_payload(h * w * 5, "grid");
    SparseGrid grid(static_cast<int>(h), static_cast<int>(w));
    std::vector<double> values(h * w);
    for (double& v : values) v = reader.read_f32("cell values");
    for (uint64_t i = 0; i < h * w; ++i) {
        const uint8_t m = reader.read_u8("cell mask");
        if (m > 1) {
            std::ostringstream msg;
            msg << path << ": mask byte at cell " << i << " is " << int(m) << ", expected 0 or 1";
            throw io_error(msg.str());
        }
        if (m) {
            if (!std::isfinite(values[i])) {
                std::ostringstream msg;
                msg << path << ": non-finite value at masked-in cell " << i;
                throw io_error(msg.str());
            }
            grid.set(static_cast<int>(i) / grid.width, static_cast<int>(i) % grid.width, values[i]);
        } else if (values[i] != 0.0) {
            std::ostringstream msg;
            msg << path << ": masked-out cell " << i << " stores " << values[i] << ", expected 0";
            throw io_error(msg.str());
        }
    }
    return grid;
}

void save_sparse_grid(const std::string& path, const SparseGrid& grid) {
    BinaryWriter writer(path, "LFSG");
    writer.write_u32(static_cast<uint32_t>(grid.height));
    writer.write_u32(static_cast<uint32_t>(grid.width));
    for (int y = 0; y < grid.height; ++y) {
        for (int x = 0; x < grid.width; ++x) {
            writer.write_f32(grid.valid(y, x) ? grid.value(y, x) : 0.0);
        }
    }
    for (int y = 0; y < grid.height; ++y) {
        for (int x = 0; x < grid.width; ++x) {
            writer.write_u8(grid.valid(y, x) ? 1 : 0);
        }
    }
    writer.finish();
}

LabelMap load_label_map(const std::string& path) {
    BinaryReader reader(path, "LFLM");
    const uint64_t h = reader.read_u32("height");
    const uint64_t w = reader.read_u32("width");
    check_dims(path, {{"height", h}, {"width", w}});
    reader.expect_payload(h * w, "label");
    LabelMap labels(static_cast<int>(h), static_cast<int>(w));
    for (uint64_t i = 0; i < h * w; ++i) labels.labels[i] = reader.read_u8("label bytes");
    return labels;
}

void save_label_map(const std::string& path, const LabelMap& labels) {
    BinaryWriter writer(path, "LFLM");
    writer.write_u32(static_cast<uint32_t>(labels.height));
    writer.write_u32(static_cast<uint32_t>(labels.width));
    for (uint8_t label : labels.labels) writer.write_u8(label);
    writer.finish();
}

namespace {

std::string next_content_line(std::istream& in, const std::string& path, int& line_no, const char* what) {
    std::string line;
    while (std::getline(in, line)) {
        ++line_no;
        size_t start = line.find_first_not_of(" \t\r");
        if (start == std::string::npos) continue;
        size_t end = line.find_last_not_of(" \t\r");
        return line.substr(start, end - start + 1);
    }
    std::ostringstream msg;
    msg << path << ": unexpected end of file, expected " << what;
    throw io_error(msg.str());
}

void parse_row(const std::string& path, int line_no, const std::string& line, double* out, int n) {
    std::istringstream fields(line);
    for (int i = 0; i < n; ++i) {
        if (!(fields >> out[i])) {
            std::ostringstream msg;
            msg << path << ":" << line_no << ": expected " << n << " decimals, got \"" << line << "\"";
            throw io_error(msg.str());
        }
    }
    std::string extra;
    if (fields >> extra) {
        std::ostringstream msg;
        msg << path << ":" << line_no << ": trailing token \"" << extra << "\" after " << n << " decimals";
        throw io_error(msg.str());
    }
}

}  // namespace

CameraModel load_calibration(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw io_error(path + ": cannot open for reading");
    int line_no = 0;

    std::string tag = next_content_line(in, path, line_no, "\"K\"");
    if (tag != "K") throw io_error(path + ": expected \"K\" header line, got \"" + tag + "\"");
    CameraModel camera;
    for (int r = 0; r < 3; ++r) {
        const std::string line = next_content_line(in, path, line_no, "an intrinsics row");
        double row[4];
        parse_row(path, line_no, line, row, 4);
        for (int c = 0; c < 4; ++c) camera.intrinsics(r, c) = row[c];
    }

    tag = next_content_line(in, path, line_no, "\"T\"");
    if (tag != "T") throw io_error(path + ": expected \"T\" header line, got \"" + tag + "\"");
    for (int r = 0; r < 4; ++r) {
        const std::string line = next_content_line(in, path, line_no, "an extrinsics row");
        double row[4];
        parse_row(path, line_no, line, row, 4);
        for (int c = 0; c < 4; ++c) camera.extrinsics(r, c) = row[c];
    }

    const std::string size_line = next_content_line(in, path, line_no, "the SIZE line");
    std::istringstream fields(size_line);
    std::string word;
    fields >> word;
    if (word != "SIZE") throw io_error(path + ": expected \"SIZE H W h w\", got \"" + size_line + "\"");
    if (!(fields >> camera.image_height >> camera.image_width >> camera.grid_height >> camera.grid_width)) {
        throw io_error(path + ": expected \"SIZE H W h w\", got \"" + size_line + "\"");
    }
    std::string extra;
    if (fields >> extra) {
        throw io_error(path + ": trailing token \"" + extra + "\" on the SIZE line");
    }
    camera.validate();
    return camera;
}

void save_calibration(const std::string& path, const CameraModel& camera) {
    camera.validate();
    std::ofstream out(path);
    if (!out) throw io_error(path + ": cannot open for writing");
    char buf[128];
    out << "K\n";
    for (int r = 0; r < 3; ++r) {
        std::snprintf(buf, sizeof(buf), "%.17g %.17g %.17g %.17g\n", camera.intrinsics(r, 0),
                      camera.intrinsics(r, 1), camera.intrinsics(r, 2), camera.intrinsics(r, 3));
        out << buf;
    }
    out << "T\n";
    for (int r = 0; r < 4; ++r) {
        std::snprintf(buf, sizeof(buf), "%.17g %.17g %.17g %.17g\n", camera.extrinsics(r, 0),
                      camera.extrinsics(r, 1), camera.extrinsics(r, 2), camera.extrinsics(r, 3));
        out << buf;
    }
    out << "SIZE " << camera.image_height << " " << camera.image_width << " " << camera.grid_height << " "
        << camera.grid_width << "\n";
    out.flush();
    if (!out) throw io_error(path + ": write failed");
}

void save_voxel_grid_dump(const std::string& path, const VoxelGrid& grid) {
    std::ofstream out(path);
    if (!out) throw io_error(path + ": cannot open for writing");
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%zu %d %.17g\n", grid.voxel_indices.size(), grid.feature_channels,
                  grid.config.resolution);
    out << buf;
    for (size_t i = 0; i < grid.voxel_indices.size(); ++i) {
        out << grid.voxel_indices[i][0] << " " << grid.voxel_indices[i][1] << " " << grid.voxel_indices[i][2];
        for (int c = 0; c < grid.feature_channels; ++c) {
            std::snprintf(buf, sizeof(buf), " %.17g", grid.features[i][c]);
            out << buf;
        }
        out << "\n";
    }
    out.flush();
    if (!out) throw io_error(path + ": write failed");
}

}  // namespace mlpfseg
