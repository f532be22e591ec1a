// Pascal VOC annotation ingestion: a small XML reader plus field extraction
// with distinct error codes for malformed documents, missing fields, and
// out-of-bounds boxes.
#pragma once

#include <string>
#include <vector>

#include "sctdet/synth.hpp"

namespace sctdet {

enum class VocErrorCode { MalformedXml, MissingField, InvalidBox };

struct VocParseError : DataError {
    VocErrorCode code;
    VocParseError(VocErrorCode c, const std::string& msg) : DataError(msg), code(c) {}
};

struct VocObject {
    std::string name;
    int xmin = 0, ymin = 0, xmax = 0, ymax = 0;  // pixel coordinates
    bool difficult = false;
};

struct VocAnnotation {
    std::string filename;
    int width = 0, height = 0;
    std::vector<VocObject> objects;
};

// Parses one VOC annotation document. Unknown elements are ignored.
VocAnnotation parse_voc_xml(const std::string& bytes);

VocAnnotation load_voc_file(const std::string& path);

namespace xml {

struct Node {
    std::string name;
    std::string text;  // concatenated character data directly under this node
    std::vector<Node> children;

    const Node* find(const std::string& child_name) const;
};

// Minimal XML subset: declaration, comments, nested elements, attributes
// (accepted and discarded), character data, and the five predefined entities.
// Throws VocParseError{MalformedXml} on anything structurally invalid.
Node parse(const std::string& bytes);

}  // namespace xml

}  // namespace sctdet
