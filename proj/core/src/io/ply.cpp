#include "skyline/io/ply.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include "skyline/error.hpp"

namespace skyline::io {

namespace {

const char* type_name(PlyType t) {
    switch (t) {
    case PlyType::U8: return "uchar";
    case PlyType::I32: return "int";
    case PlyType::F32: return "float";
    case PlyType::F64: return "double";
    }
    return "float";
}

bool parse_type(const std::string& s, PlyType* t) {
    if (s == "uchar" || s == "uint8") *t = PlyType::U8;
    else if (s == "int" || s == "int32") *t = PlyType::I32;
    else if (s == "float" || s == "float32") *t = PlyType::F32;
    else if (s == "double" || s == "float64") *t = PlyType::F64;
    else return false;
    return true;
}

std::size_t type_size(PlyType t) {
    switch (t) {
    case PlyType::U8: return 1;
    case PlyType::I32: return 4;
    case PlyType::F32: return 4;
    case PlyType::F64: return 8;
    }
    return 4;
}

void write_value(std::ofstream& f, PlyType t, double v) {
    switch (t) {
    case PlyType::U8: {
        unsigned char b = static_cast<unsigned char>(v);
        f.write(reinterpret_cast<const char*>(&b), 1);
        break;
    }
    case PlyType::I32: {
        std::int32_t i = static_cast<std::int32_t>(v);
        f.write(reinterpret_cast<const char*>(&i), 4);
        break;
    }
    case PlyType::F32: {
        float x = static_cast<float>(v);
        f.write(reinterpret_cast<const char*>(&x), 4);
        break;
    }
    case PlyType::F64: {
        f.write(reinterpret_cast<const char*>(&v), 8);
        break;
    }
    }
}

double read_value(std::ifstream& f, PlyType t) {
    switch (t) {
    case PlyType::U8: {
        unsigned char b;
        f.read(reinterpret_cast<char*>(&b), 1);
        return b;
    }
    case PlyType::I32: {
        std::int32_t i;
        f.read(reinterpret_cast<char*>(&i), 4);
        return i;
    }
    case PlyType::F32: {
        float x;
        f.read(reinterpret_cast<char*>(&x), 4);
        return x;
    }
    case PlyType::F64: {
        double v;
        f.read(reinterpret_cast<char*>(&v), 8);
        return v;
    }
    }
    return 0;
}

} // namespace

int PlyTable::col(const std::string& name) const {
    for (std::size_t i = 0; i < props.size(); ++i)
        if (props[i].name == name) return static_cast<int>(i);
    return -1;
}

const PlyTable* PlyFile::find(const std::string& element) const {
    for (const auto& t : tables)
        if (t.element == element) return &t;
    return nullptr;
}

void write_ply(const std::string& path, const PlyFile& file) {
    std::ofstream f(path, std::ios::binary);
    if (!f) fail(Errc::IoError, "cannot open " + path + " for writing");
    f << "ply\nformat binary_little_endian 1.0\n";
    for (const auto& t : file.tables) {
        f << "element " << t.element << " " << t.rows << "\n";
        for (const auto& p : t.props) f << "property " << type_name(p.type) << " " << p.name << "\n";
    }
    if (!file.faces.empty()) {
        f << "element face " << file.faces.size() << "\n";
        f << "property list uchar int vertex_indices\n";
    }
    f << "end_header\n";
    for (const auto& t : file.tables)
        for (std::size_t r = 0; r < t.rows; ++r)
            for (std::size_t c = 0; c < t.props.size(); ++c) write_value(f, t.props[c].type, t.at(r, c));
    for (const auto& face : file.faces) {
        unsigned char n = 3;
        f.write(reinterpret_cast<const char*>(&n), 1);
        for (int idx : face) {
            std::int32_t i = idx;
            f.write(reinterpret_cast<const char*>(&i), 4);
        }
    }
}

PlyFile read_ply(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) fail(Errc::IoError, "cannot open " + path);
    std::string line;
    if (!std::getline(f, line) || line.substr(0, 3) != "ply") fail(Errc::ParseError, path + ": missing ply magic");

    bool binary = false;
    PlyFile out;
    struct ElementDesc {
        std::string name;
        std::size_t count = 0;
        std::vector<PlyPropertySpec> props;
        bool has_face_list = false;
        PlyType list_count_type = PlyType::U8;
        PlyType list_value_type = PlyType::I32;
    };
    std::vector<ElementDesc> elements;
    int line_no = 1;

    while (std::getline(f, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        std::istringstream is(line);
        std::string tok;
        is >> tok;
        if (tok == "comment" || tok == "obj_info" || tok.empty()) continue;
        if (tok == "format") {
            std::string fmt;
            is >> fmt;
            if (fmt == "binary_little_endian") binary = true;
            else if (fmt == "ascii") binary = false;
            else fail(Errc::ParseError, path + ":" + std::to_string(line_no) + ": unsupported format " + fmt);
        } else if (tok == "element") {
            ElementDesc e;
            is >> e.name >> e.count;
            elements.push_back(e);
        } else if (tok == "property") {
            if (elements.empty()) fail(Errc::ParseError, path + ":" + std::to_string(line_no) + ": property before element");
            std::string t1;
            is >> t1;
            if (t1 == "list") {
                std::string ct, vt, name;
                is >> ct >> vt >> name;
                PlyType c, v;
                if (!parse_type(ct, &c) || !parse_type(vt, &v))
                    fail(Errc::ParseError, path + ":" + std::to_string(line_no) + ": bad list types");
                elements.back().has_face_list = true;
                elements.back().list_count_type = c;
                elements.back().list_value_type = v;
            } else {
                PlyPropertySpec p;
                if (!parse_type(t1, &p.type))
                    fail(Errc::ParseError, path + ":" + std::to_string(line_no) + ": unknown type " + t1);
                is >> p.name;
                elements.back().props.push_back(p);
            }
        } else if (tok == "end_header") {
            break;
        } else {
            fail(Errc::ParseError, path + ":" + std::to_string(line_no) + ": unexpected token " + tok);
        }
    }

    for (const auto& e : elements) {
        if (e.has_face_list) {
            for (std::size_t r = 0; r < e.count; ++r) {
                long n;
                if (binary) {
                    n = static_cast<long>(read_value(f, e.list_count_type));
                } else {
                    f >> n;
                }
                std::vector<int> idx(static_cast<std::size_t>(n));
                for (long i = 0; i < n; ++i) {
                    if (binary)
                        idx[static_cast<std::size_t>(i)] = static_cast<int>(read_value(f, e.list_value_type));
                    else
                        f >> idx[static_cast<std::size_t>(i)];
                }
                for (long i = 2; i < n; ++i) // triangulate polygon fans
                    out.faces.push_back({idx[0], idx[static_cast<std::size_t>(i - 1)], idx[static_cast<std::size_t>(i)]});
            }
            continue;
        }
        PlyTable t;
        t.element = e.name;
        t.props = e.props;
        t.resize_rows(e.count);
        if (binary) {
            std::size_t row_bytes = 0;
            for (const auto& p : e.props) row_bytes += type_size(p.type);
            (void)row_bytes;
            for (std::size_t r = 0; r < e.count; ++r)
                for (std::size_t c = 0; c < e.props.size(); ++c) t.at(r, c) = read_value(f, e.props[c].type);
        } else {
            for (std::size_t r = 0; r < e.count; ++r)
                for (std::size_t c = 0; c < e.props.size(); ++c) {
                    double v;
                    f >> v;
                    t.at(r, c) = v;
                }
        }
        if (!f) fail(Errc::ParseError, path + ": truncated element " + e.name);
        out.tables.push_back(std::move(t));
    }
    return out;
}

} // namespace skyline::io
