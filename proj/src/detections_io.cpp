#include "sctdet/detections_io.hpp"

#include <fstream>

#include "json.hpp"
#include "sctdet/synth.hpp"

namespace sctdet {

using nlohmann::json;

void export_detections(const std::vector<ImageDetection>& detections, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw DataError("cannot write " + path);
    for (const ImageDetection& d : detections) {
        json j{{"image_id", d.image_id},
               {"class_id", d.det.class_id},
               {"confidence", d.det.confidence},
               {"box", {d.det.box.xmin, d.det.box.ymin, d.det.box.xmax, d.det.box.ymax}}};
        f << j.dump() << "\n";
    }
}

std::vector<ImageDetection> import_detections(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw DataError("cannot read " + path);
    std::vector<ImageDetection> out;
    std::string line;
    int line_no = 0;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            const json j = json::parse(line);
            ImageDetection d;
            d.image_id = j.at("image_id").get<int>();
            d.det.class_id = j.at("class_id").get<int>();
            d.det.confidence = j.at("confidence").get<double>();
            const json& b = j.at("box");
            d.det.box = Box{b.at(0).get<double>(), b.at(1).get<double>(), b.at(2).get<double>(),
                            b.at(3).get<double>()};
            out.push_back(d);
        } catch (const json::exception& e) {
            throw DataError(path + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

}  // namespace sctdet
