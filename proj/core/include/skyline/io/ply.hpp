#pragma once

#include <array>
#include <string>
#include <vector>

namespace skyline::io {

enum class PlyType { U8, I32, F32, F64 };

struct PlyPropertySpec {
    std::string name;
    PlyType type = PlyType::F32;
};

// One fixed-width element: rows x properties, held as doubles and converted
// to the declared type on write.
struct PlyTable {
    std::string element = "vertex";
    std::vector<PlyPropertySpec> props;
    std::size_t rows = 0;
    std::vector<double> data;

    double at(std::size_t row, std::size_t col) const { return data[row * props.size() + col]; }
    double& at(std::size_t row, std::size_t col) { return data[row * props.size() + col]; }
    int col(const std::string& name) const;
    void resize_rows(std::size_t n) {
        rows = n;
        data.assign(n * props.size(), 0.0);
    }
};

struct PlyFile {
    std::vector<PlyTable> tables;
    std::vector<std::array<int, 3>> faces; // triangle element, optional

    const PlyTable* find(const std::string& element) const;
};

// Binary little-endian writer; a non-empty faces list adds a face element
// with `list uchar int vertex_indices`.
void write_ply(const std::string& path, const PlyFile& file);

// Reads ascii and binary little-endian PLY. Fixed properties land in tables;
// a triangle list property on a face element lands in faces.
PlyFile read_ply(const std::string& path);

} // namespace skyline::io
