#include "sctdet/voc.hpp"

#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace sctdet {

namespace xml {

namespace {

struct Cursor {
    const std::string& s;
    size_t pos = 0;

    bool done() const { return pos >= s.size(); }
    char peek() const { return s[pos]; }
    bool starts_with(const char* lit) const { return s.compare(pos, std::strlen(lit), lit) == 0; }

    [[noreturn]] void fail(const std::string& why) const {
        throw VocParseError(VocErrorCode::MalformedXml,
                            "xml: " + why + " at offset " + std::to_string(pos));
    }
};

bool is_name_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_' || c == ':'; }
bool is_name_char(char c) {
    return is_name_start(c) || std::isdigit(static_cast<unsigned char>(c)) || c == '-' || c == '.';
}

void skip_ws(Cursor& c) {
    while (!c.done() && std::isspace(static_cast<unsigned char>(c.peek()))) ++c.pos;
}

std::string read_name(Cursor& c) {
    if (c.done() || !is_name_start(c.peek())) c.fail("expected a name");
    const size_t start = c.pos;
    while (!c.done() && is_name_char(c.peek())) ++c.pos;
    return c.s.substr(start, c.pos - start);
}

void expect(Cursor& c, char ch) {
    if (c.done() || c.peek() != ch) c.fail(std::string("expected '") + ch + "'");
    ++c.pos;
}

std::string decode_entity(Cursor& c) {
    // cursor sits just past '&'
    const size_t semi = c.s.find(';', c.pos);
    if (semi == std::string::npos || semi - c.pos > 8) c.fail("unterminated entity");
    const std::string ent = c.s.substr(c.pos, semi - c.pos);
    c.pos = semi + 1;
    if (ent == "lt") return "<";
    if (ent == "gt") return ">";
    if (ent == "amp") return "&";
    if (ent == "quot") return "\"";
    if (ent == "apos") return "'";
    if (!ent.empty() && ent[0] == '#') {
        try {
            const int code = ent[1] == 'x' || ent[1] == 'X'
                                 ? std::stoi(ent.substr(2), nullptr, 16)
                                 : std::stoi(ent.substr(1));
            if (code < 1 || code > 127) c.fail("unsupported character reference");
            return std::string(1, static_cast<char>(code));
        } catch (const std::logic_error&) {
            c.fail("bad character reference");
        }
    }
    c.fail("unknown entity &" + ent + ";");
}

void skip_comment(Cursor& c) {
    // cursor sits at "<!--"
    c.pos += 4;
    const size_t end = c.s.find("-->", c.pos);
    if (end == std::string::npos) c.fail("unterminated comment");
    c.pos = end + 3;
}

void skip_attributes(Cursor& c) {
    while (true) {
        skip_ws(c);
        if (c.done()) c.fail("unterminated tag");
        if (c.peek() == '>' || c.peek() == '/' || c.peek() == '?') return;
        read_name(c);
        skip_ws(c);
        expect(c, '=');
        skip_ws(c);
        if (c.done() || (c.peek() != '"' && c.peek() != '\'')) c.fail("attribute value must be quoted");
        const char quote = c.peek();
        ++c.pos;
        while (!c.done() && c.peek() != quote) {
            if (c.peek() == '<') c.fail("'<' in attribute value");
            ++c.pos;
        }
        expect(c, quote);
    }
}

Node parse_element(Cursor& c);

void parse_content(Cursor& c, Node& node) {
    while (true) {
        if (c.done()) c.fail("unexpected end inside <" + node.name + ">");
        if (c.peek() == '<') {
            if (c.starts_with("<!--")) {
                skip_comment(c);
                continue;
            }
            if (c.starts_with("</")) return;  // caller consumes the close tag
            if (c.starts_with("<!") || c.starts_with("<?")) c.fail("unexpected markup in content");
            node.children.push_back(parse_element(c));
            continue;
        }
        if (c.peek() == '&') {
            ++c.pos;
            node.text += decode_entity(c);
            continue;
        }
        node.text += c.peek();
        ++c.pos;
    }
}

Node parse_element(Cursor& c) {
    expect(c, '<');
    Node node;
    node.name = read_name(c);
    skip_attributes(c);
    if (c.peek() == '/') {
        ++c.pos;
        expect(c, '>');
        return node;  // self-closing
    }
    expect(c, '>');
    parse_content(c, node);
    // close tag
    c.pos += 2;  // "</"
    const std::string close = read_name(c);
    if (close != node.name)
        c.fail("mismatched close tag </" + close + "> for <" + node.name + ">");
    skip_ws(c);
    expect(c, '>');
    return node;
}

}  // namespace

const Node* Node::find(const std::string& child_name) const {
    for (const Node& ch : children)
        if (ch.name == child_name) return &ch;
    return nullptr;
}

Node parse(const std::string& bytes) {
    Cursor c{bytes};
    skip_ws(c);
    if (c.starts_with("<?xml")) {
        const size_t end = c.s.find("?>", c.pos);
        if (end == std::string::npos) c.fail("unterminated xml declaration");
        c.pos = end + 2;
    }
    while (true) {
        skip_ws(c);
        if (!c.done() && c.starts_with("<!--")) {
            skip_comment(c);
            continue;
        }
        break;
    }
    if (c.done() || c.peek() != '<') c.fail("expected a root element");
    Node root = parse_element(c);
    skip_ws(c);
    while (!c.done() && c.starts_with("<!--")) {
        skip_comment(c);
        skip_ws(c);
    }
    if (!c.done()) c.fail("trailing content after the root element");
    return root;
}

}  // namespace xml

namespace {

std::string trimmed(const std::string& s) {
    size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

const xml::Node& require_child(const xml::Node& parent, const std::string& name) {
    const xml::Node* ch = parent.find(name);
    if (!ch)
        throw VocParseError(VocErrorCode::MissingField,
                            "missing <" + name + "> under <" + parent.name + ">");
    return *ch;
}

int int_field(const xml::Node& parent, const std::string& name) {
    const std::string text = trimmed(require_child(parent, name).text);
    if (text.empty())
        throw VocParseError(VocErrorCode::MissingField, "<" + name + "> is empty");
    try {
        size_t used = 0;
        // VOC coordinates are integers; tolerate a trailing ".0"
        const double v = std::stod(text, &used);
        if (used != text.size())
            throw VocParseError(VocErrorCode::MissingField, "<" + name + "> is not a number: " + text);
        return static_cast<int>(std::lround(v));
    } catch (const std::logic_error&) {
        throw VocParseError(VocErrorCode::MissingField, "<" + name + "> is not a number: " + text);
    }
}

}  // namespace

VocAnnotation parse_voc_xml(const std::string& bytes) {
    const xml::Node root = xml::parse(bytes);
    if (root.name != "annotation")
        throw VocParseError(VocErrorCode::MalformedXml, "root element must be <annotation>");

    VocAnnotation ann;
    ann.filename = trimmed(require_child(root, "filename").text);
    if (ann.filename.empty())
        throw VocParseError(VocErrorCode::MissingField, "<filename> is empty");
    const xml::Node& size = require_child(root, "size");
    ann.width = int_field(size, "width");
    ann.height = int_field(size, "height");
    if (ann.width <= 0 || ann.height <= 0)
        throw VocParseError(VocErrorCode::MissingField, "image size must be positive");

    for (const xml::Node& child : root.children) {
        if (child.name != "object") continue;
        VocObject obj;
        obj.name = trimmed(require_child(child, "name").text);
        if (obj.name.empty())
            throw VocParseError(VocErrorCode::MissingField, "<name> is empty");
        const xml::Node& bb = require_child(child, "bndbox");
        obj.xmin = int_field(bb, "xmin");
        obj.ymin = int_field(bb, "ymin");
        obj.xmax = int_field(bb, "xmax");
        obj.ymax = int_field(bb, "ymax");
        if (const xml::Node* diff = child.find("difficult"))
            obj.difficult = trimmed(diff->text) == "1";
        if (obj.xmin >= obj.xmax || obj.ymin >= obj.ymax)
            throw VocParseError(VocErrorCode::InvalidBox,
                                obj.name + ": box is empty or inverted");
        if (obj.xmin < 0 || obj.ymin < 0 || obj.xmax > ann.width || obj.ymax > ann.height)
            throw VocParseError(VocErrorCode::InvalidBox,
                                obj.name + ": box exceeds the image bounds");
        ann.objects.push_back(obj);
    }
    return ann;
}

VocAnnotation load_voc_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot read " + path);
    std::ostringstream buf;
    buf << f.rdbuf();
    return parse_voc_xml(buf.str());
}

}  // namespace sctdet
