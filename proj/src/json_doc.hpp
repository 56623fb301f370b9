#pragma once

// JSON documents that remember the source line of every value, so schema errors in scene
// scripts and run configs can point at the offending line.

#include "occfit/common.hpp"

#include <json.hpp>

#include <filesystem>
#include <initializer_list>
#include <map>
#include <string>

namespace occ {

using json = nlohmann::json;

class JsonDoc {
 public:
  /// Throws InputError "<source>:<line>:<col>: ..." on a syntax error.
  JsonDoc(const std::string& text, std::string source);
  static JsonDoc load(const std::filesystem::path& path);

  const json& root() const { return root_; }
  const std::string& source() const { return source_; }

  /// "<source>:<line>: " for a JSON pointer (nearest recorded ancestor if absent).
  std::string where(const std::string& pointer) const;
  [[noreturn]] void fail(const std::string& pointer, const std::string& message) const;

  /// Rejects keys of the object at `pointer` outside `allowed`.
  void check_keys(const std::string& pointer, std::initializer_list<const char*> allowed) const;

  // Typed accessors; throw a line-anchored InputError on a type mismatch.
  const json& at(const std::string& pointer) const;
  bool has(const std::string& pointer) const;
  double number(const std::string& pointer) const;
  long long integer(const std::string& pointer) const;
  bool boolean(const std::string& pointer) const;
  std::string string(const std::string& pointer) const;
  Vec3 vec3(const std::string& pointer) const;

  double number_or(const std::string& pointer, double fallback) const;
  long long integer_or(const std::string& pointer, long long fallback) const;
  bool boolean_or(const std::string& pointer, bool fallback) const;
  std::string string_or(const std::string& pointer, const std::string& fallback) const;

 private:
  json root_;
  std::string source_;
  std::map<std::string, int> lines_;
};

}  // namespace occ
