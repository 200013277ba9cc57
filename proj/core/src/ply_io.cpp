#include "gazefit/ply_io.hpp"

#include <charconv>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "gazefit/error.hpp"

namespace gazefit {

namespace {

struct ElementDecl {
    std::string name;
    long count = 0;
    std::vector<std::string> properties;
    bool has_list = false;
};

std::vector<std::string> tokenize(const std::string& line) {
    std::vector<std::string> tokens;
    std::istringstream stream(line);
    std::string token;
    while (stream >> token) {
        tokens.push_back(token);
    }
    return tokens;
}

[[noreturn]] void fail(int line_no, const std::string& message) {
    throw ParseError("PLY line " + std::to_string(line_no) + ": " + message);
}

double parse_double(const std::string& token, int line_no) {
    try {
        size_t pos = 0;
        const double value = std::stod(token, &pos);
        if (pos != token.size()) {
            fail(line_no, "trailing characters in numeric value '" + token + "'");
        }
        return value;
    } catch (const std::invalid_argument&) {
        fail(line_no, "expected a number, got '" + token + "'");
    } catch (const std::out_of_range&) {
        fail(line_no, "numeric value out of range: '" + token + "'");
    }
}

} // namespace

PointSet load_ply(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open PLY file: " + path.string());
    }

    std::string line;
    int line_no = 0;
    auto next_line = [&](bool required) -> bool {
        while (std::getline(in, line)) {
            ++line_no;
            if (!line.empty() && line.back() == '\r') {
                line.pop_back();
            }
            return true;
        }
        if (required) {
            fail(line_no, "unexpected end of file");
        }
        return false;
    };

    next_line(true);
    if (line != "ply") {
        fail(line_no, "missing 'ply' magic");
    }

    std::vector<ElementDecl> elements;
    bool format_seen = false;
    bool header_done = false;
    while (!header_done) {
        next_line(true);
        const auto tokens = tokenize(line);
        if (tokens.empty() || tokens[0] == "comment" || tokens[0] == "obj_info") {
            continue;
        }
        if (tokens[0] == "format") {
            if (tokens.size() < 2 || tokens[1] != "ascii") {
                fail(line_no, "only 'format ascii 1.0' is supported");
            }
            format_seen = true;
        } else if (tokens[0] == "element") {
            if (tokens.size() != 3) {
                fail(line_no, "element declaration needs a name and a count");
            }
            ElementDecl decl;
            decl.name = tokens[1];
            try {
                decl.count = std::stol(tokens[2]);
            } catch (...) {
                fail(line_no, "element count is not an integer: '" + tokens[2] + "'");
            }
            if (decl.count < 0) {
                fail(line_no, "element count must be non-negative");
            }
            elements.push_back(std::move(decl));
        } else if (tokens[0] == "property") {
            if (elements.empty()) {
                fail(line_no, "property declared before any element");
            }
            if (tokens.size() < 3) {
                fail(line_no, "incomplete property declaration");
            }
            if (tokens[1] == "list") {
                elements.back().has_list = true;
            } else {
                elements.back().properties.push_back(tokens.back());
            }
        } else if (tokens[0] == "end_header") {
            header_done = true;
        } else {
            fail(line_no, "unknown header keyword '" + tokens[0] + "'");
        }
    }
    if (!format_seen) {
        fail(line_no, "header has no 'format' line");
    }

    const ElementDecl* vertex_decl = nullptr;
    for (const auto& e : elements) {
        if (e.name == "vertex") {
            vertex_decl = &e;
            break;
        }
    }
    if (vertex_decl == nullptr) {
        fail(line_no, "header declares no 'vertex' element");
    }
    if (vertex_decl->has_list) {
        fail(line_no, "list properties on the vertex element are not supported");
    }

    int ix = -1, iy = -1, iz = -1, inx = -1, iny = -1, inz = -1;
    const auto& props = vertex_decl->properties;
    for (size_t i = 0; i < props.size(); ++i) {
        if (props[i] == "x") ix = static_cast<int>(i);
        else if (props[i] == "y") iy = static_cast<int>(i);
        else if (props[i] == "z") iz = static_cast<int>(i);
        else if (props[i] == "nx") inx = static_cast<int>(i);
        else if (props[i] == "ny") iny = static_cast<int>(i);
        else if (props[i] == "nz") inz = static_cast<int>(i);
    }
    if (ix < 0 || iy < 0 || iz < 0) {
        fail(line_no, "vertex element must declare properties x, y and z");
    }
    const bool with_normals = inx >= 0 && iny >= 0 && inz >= 0;

    PointSet cloud;
    cloud.points.reserve(static_cast<size_t>(vertex_decl->count));
    if (with_normals) {
        cloud.normals.reserve(static_cast<size_t>(vertex_decl->count));
    }

    for (const auto& element : elements) {
        if (element.name == "vertex") {
            for (long i = 0; i < element.count; ++i) {
                if (!next_line(false)) {
                    fail(line_no, "file truncated: expected " + std::to_string(element.count) +
                                      " vertex lines, got " + std::to_string(i));
                }
                const auto tokens = tokenize(line);
                if (tokens.size() != props.size()) {
                    fail(line_no, "vertex line has " + std::to_string(tokens.size()) +
                                      " values, header declares " + std::to_string(props.size()));
                }
                cloud.points.emplace_back(parse_double(tokens[ix], line_no),
                                          parse_double(tokens[iy], line_no),
                                          parse_double(tokens[iz], line_no));
                if (with_normals) {
                    cloud.normals.emplace_back(parse_double(tokens[inx], line_no),
                                               parse_double(tokens[iny], line_no),
                                               parse_double(tokens[inz], line_no));
                }
            }
        } else {
            // Skip the data lines of elements we do not interpret.
            for (long i = 0; i < element.count; ++i) {
                if (!next_line(false)) {
                    fail(line_no, "file truncated inside element '" + element.name + "'");
                }
            }
        }
    }
    return cloud;
}

void save_ply(const PointSet& cloud, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) {
        throw IoError("cannot write PLY file: " + path.string());
    }
    const bool with_normals = cloud.has_normals();
    out << "ply\nformat ascii 1.0\n";
    out << "element vertex " << cloud.points.size() << "\n";
    out << "property double x\nproperty double y\nproperty double z\n";
    if (with_normals) {
        out << "property double nx\nproperty double ny\nproperty double nz\n";
    }
    out << "end_header\n";
    char buffer[64];
    auto emit = [&](double value, char sep) {
        const auto res = std::to_chars(buffer, buffer + sizeof(buffer), value);
        out.write(buffer, res.ptr - buffer);
        out.put(sep);
    };
    for (size_t i = 0; i < cloud.points.size(); ++i) {
        const auto& p = cloud.points[i];
        emit(p.x(), ' ');
        emit(p.y(), ' ');
        emit(p.z(), with_normals ? ' ' : '\n');
        if (with_normals) {
            const auto& n = cloud.normals[i];
            emit(n.x(), ' ');
            emit(n.y(), ' ');
            emit(n.z(), '\n');
        }
    }
    if (!out) {
        throw IoError("failed while writing PLY file: " + path.string());
    }
}

} // namespace gazefit
