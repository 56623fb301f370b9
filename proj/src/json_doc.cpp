#include "json_doc.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <vector>

namespace occ {
namespace {

std::string escape_token(const std::string& key) {
  std::string out;
  for (char ch : key) {
    if (ch == '~') {
      out += "~0";
    } else if (ch == '/') {
      out += "~1";
    } else {
      out += ch;
    }
  }
  return out;
}

// Walks already-validated JSON text and records the line on which each value starts.
std::map<std::string, int> index_lines(const std::string& text) {
  struct Frame {
    bool object;
    bool expecting_key;
    std::string key;
    long index;
  };
  std::map<std::string, int> lines;
  std::vector<Frame> stack;
  int line = 1;

  auto pointer = [&] {
    std::string p;
    for (const Frame& f : stack) {
      p += '/';
      p += f.object ? escape_token(f.key) : std::to_string(f.index);
    }
    return p;
  };
  auto record = [&] { lines.emplace(pointer(), line); };

  for (std::size_t i = 0; i < text.size(); ++i) {
    const char ch = text[i];
    switch (ch) {
      case '\n':
        ++line;
        break;
      case ' ':
      case '\t':
      case '\r':
      case ':':
        break;
      case '{':
      case '[':
        record();
        stack.push_back({ch == '{', ch == '{', {}, 0});
        break;
      case '}':
      case ']':
        stack.pop_back();
        break;
      case ',':
        if (stack.back().object) {
          stack.back().expecting_key = true;
        } else {
          ++stack.back().index;
        }
        break;
      case '"': {
        std::string s;
        for (++i; i < text.size() && text[i] != '"'; ++i) {
          if (text[i] == '\\') {
            ++i;
            // Keys with escapes other than \" and \\ are not used by any schema here.
          }
          s += text[i];
        }
        if (!stack.empty() && stack.back().object && stack.back().expecting_key) {
          stack.back().key = s;
          stack.back().expecting_key = false;
        } else {
          record();
        }
        break;
      }
      default:
        record();
        while (i + 1 < text.size() && std::string_view(",]}\n \t\r").find(text[i + 1]) == std::string_view::npos) {
          ++i;
        }
        break;
    }
  }
  return lines;
}

}  // namespace

JsonDoc::JsonDoc(const std::string& text, std::string source) : source_(std::move(source)) {
  try {
    root_ = json::parse(text);
  } catch (const json::parse_error& e) {
    const std::size_t pos = std::min<std::size_t>(e.byte == 0 ? 0 : e.byte - 1, text.size());
    const auto line = 1 + std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(pos), '\n');
    const auto last_nl = text.rfind('\n', pos == 0 ? 0 : pos - 1);
    const std::size_t col = last_nl == std::string::npos || pos == 0 ? pos + 1 : pos - last_nl;
    throw InputError(source_ + ":" + std::to_string(line) + ":" + std::to_string(col) + ": JSON syntax error: " +
                     e.what());
  }
  lines_ = index_lines(text);
}

JsonDoc JsonDoc::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return JsonDoc(ss.str(), path.string());
}

std::string JsonDoc::where(const std::string& pointer) const {
  std::string p = pointer;
  while (true) {
    const auto it = lines_.find(p);
    if (it != lines_.end()) return source_ + ":" + std::to_string(it->second) + ": ";
    if (p.empty()) return source_ + ":1: ";
    p = p.substr(0, p.rfind('/'));
  }
}

void JsonDoc::fail(const std::string& pointer, const std::string& message) const {
  throw InputError(where(pointer) + message + " (at " + (pointer.empty() ? "/" : pointer) + ")");
}

void JsonDoc::check_keys(const std::string& pointer, std::initializer_list<const char*> allowed) const {
  const json& obj = at(pointer);
  if (!obj.is_object()) fail(pointer, "expected an object");
  for (const auto& [key, value] : obj.items()) {
    const bool known = std::any_of(allowed.begin(), allowed.end(), [&](const char* k) { return key == k; });
    if (!known) fail(pointer + "/" + escape_token(key), "unknown key '" + key + "'");
  }
}

bool JsonDoc::has(const std::string& pointer) const { return root_.contains(json::json_pointer(pointer)); }

const json& JsonDoc::at(const std::string& pointer) const {
  if (!has(pointer)) fail(pointer, "missing required value");
  return root_.at(json::json_pointer(pointer));
}

double JsonDoc::number(const std::string& pointer) const {
  const json& v = at(pointer);
  if (!v.is_number()) fail(pointer, "expected a number");
  const double x = v.get<double>();
  if (!std::isfinite(x)) fail(pointer, "expected a finite number");
  return x;
}

long long JsonDoc::integer(const std::string& pointer) const {
  const json& v = at(pointer);
  if (!v.is_number_integer()) fail(pointer, "expected an integer");
  return v.get<long long>();
}

bool JsonDoc::boolean(const std::string& pointer) const {
  const json& v = at(pointer);
  if (!v.is_boolean()) fail(pointer, "expected true or false");
  return v.get<bool>();
}

std::string JsonDoc::string(const std::string& pointer) const {
  const json& v = at(pointer);
  if (!v.is_string()) fail(pointer, "expected a string");
  return v.get<std::string>();
}

Vec3 JsonDoc::vec3(const std::string& pointer) const {
  const json& v = at(pointer);
  if (!v.is_array() || v.size() != 3) fail(pointer, "expected an array of 3 numbers");
  Vec3 out;
  for (int i = 0; i < 3; ++i) out[i] = number(pointer + "/" + std::to_string(i));
  return out;
}

double JsonDoc::number_or(const std::string& pointer, double fallback) const {
  return has(pointer) ? number(pointer) : fallback;
}
long long JsonDoc::integer_or(const std::string& pointer, long long fallback) const {
  return has(pointer) ? integer(pointer) : fallback;
}
bool JsonDoc::boolean_or(const std::string& pointer, bool fallback) const {
  return has(pointer) ? boolean(pointer) : fallback;
}
std::string JsonDoc::string_or(const std::string& pointer, const std::string& fallback) const {
  return has(pointer) ? string(pointer) : fallback;
}

}  // namespace occ
