#include "skyline/io/colmap.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include "skyline/error.hpp"

namespace skyline::io {

namespace {

struct Intrinsics {
    double fx, fy, cx, cy;
    int width, height;
};

[[noreturn]] void parse_fail(const std::string& file, int line, const std::string& msg) {
    fail(Errc::ParseError, file + ":" + std::to_string(line) + ": " + msg);
}

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
    return s;
}

} // namespace

ColmapModel read_colmap_text(const std::string& dir, const ColmapClassRule& rule) {
    // cameras.txt: CAMERA_ID MODEL WIDTH HEIGHT PARAMS[]
    std::map<int, Intrinsics> intrinsics;
    {
        const std::string path = dir + "/cameras.txt";
        std::ifstream f(path);
        if (!f) fail(Errc::IoError, "cannot open " + path);
        std::string line;
        int line_no = 0;
        while (std::getline(f, line)) {
            ++line_no;
            if (line.empty() || line[0] == '#') continue;
            std::istringstream is(line);
            int id, w, h;
            std::string model;
            if (!(is >> id >> model >> w >> h)) parse_fail(path, line_no, "malformed camera line");
            Intrinsics in{};
            in.width = w;
            in.height = h;
            if (model == "PINHOLE") {
                if (!(is >> in.fx >> in.fy >> in.cx >> in.cy)) parse_fail(path, line_no, "PINHOLE needs 4 params");
            } else if (model == "SIMPLE_PINHOLE") {
                double fcl;
                if (!(is >> fcl >> in.cx >> in.cy)) parse_fail(path, line_no, "SIMPLE_PINHOLE needs 3 params");
                in.fx = in.fy = fcl;
            } else {
                parse_fail(path, line_no, "unsupported camera model " + model);
            }
            intrinsics[id] = in;
        }
    }

    // images.txt: IMAGE_ID QW QX QY QZ TX TY TZ CAMERA_ID NAME, then a 2D-point line.
    struct ImageRec {
        std::string name;
        Camera cam;
    };
    std::vector<ImageRec> images;
    {
        const std::string path = dir + "/images.txt";
        std::ifstream f(path);
        if (!f) fail(Errc::IoError, "cannot open " + path);
        std::string line;
        int line_no = 0;
        bool expect_points = false;
        while (std::getline(f, line)) {
            ++line_no;
            if (line.empty() || line[0] == '#') continue;
            if (expect_points) {
                expect_points = false;
                continue;
            }
            std::istringstream is(line);
            int image_id, camera_id;
            double qw, qx, qy, qz, tx, ty, tz;
            std::string name;
            if (!(is >> image_id >> qw >> qx >> qy >> qz >> tx >> ty >> tz >> camera_id >> name))
                parse_fail(path, line_no, "malformed image line");
            auto it = intrinsics.find(camera_id);
            if (it == intrinsics.end()) parse_fail(path, line_no, "unknown camera id");

            ImageRec rec;
            rec.name = name;
            rec.cam.id = image_id;
            rec.cam.fx = it->second.fx;
            rec.cam.fy = it->second.fy;
            rec.cam.cx = it->second.cx;
            rec.cam.cy = it->second.cy;
            rec.cam.width = it->second.width;
            rec.cam.height = it->second.height;
            rec.cam.R = quat_to_rot(normalize_quat(Vec4(qw, qx, qy, qz)));
            rec.cam.t = Vec3(tx, ty, tz);
            rec.cam.image_path = name;

            const std::string lname = lower(name);
            if (!rule.aerial_substring.empty() && lname.find(lower(rule.aerial_substring)) != std::string::npos)
                rec.cam.view_class = ViewClass::Aerial;
            else if (!rule.street_substring.empty() &&
                     lname.find(lower(rule.street_substring)) != std::string::npos)
                rec.cam.view_class = ViewClass::Street;
            else
                fail(Errc::ClassTagMissing, name + " matches neither class substring");
            images.push_back(std::move(rec));
            expect_points = true;
        }
    }
    std::sort(images.begin(), images.end(), [](const ImageRec& a, const ImageRec& b) { return a.name < b.name; });

    ColmapModel model;
    for (std::size_t i = 0; i < images.size(); ++i) {
        images[i].cam.appearance_id = static_cast<int>(i);
        model.cameras.push_back(images[i].cam);
        model.image_names.push_back(images[i].name);
    }

    // points3D.txt: POINT3D_ID X Y Z R G B ERROR TRACK[]
    {
        const std::string path = dir + "/points3D.txt";
        std::ifstream f(path);
        if (!f) fail(Errc::IoError, "cannot open " + path);
        std::string line;
        int line_no = 0;
        while (std::getline(f, line)) {
            ++line_no;
            if (line.empty() || line[0] == '#') continue;
            std::istringstream is(line);
            long id;
            double x, y, z;
            int r, g, b;
            if (!(is >> id >> x >> y >> z >> r >> g >> b)) parse_fail(path, line_no, "malformed point line");
            model.points.positions.emplace_back(x, y, z);
            model.points.colors.emplace_back(r / 255.0, g / 255.0, b / 255.0);
        }
    }
    return model;
}

} // namespace skyline::io
