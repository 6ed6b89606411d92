#pragma once

// CLI11 config formatter for JSON files. Nested objects map to subcommands:
// {"train-base": {"epochs": 10}} sets --epochs of `train-base`.

#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "seminf/errors.hpp"

namespace seminf::cli {

using json = nlohmann::json;

class JsonConfig : public CLI::Config {
 public:
  std::string to_config(const CLI::App* app, bool default_also, bool, std::string) const override {
    return app_json(*app, default_also).dump(2) + "\n";
  }

  std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
    json doc;
    try {
      input >> doc;
    } catch (const json::exception& e) {
      throw IoError(std::string("config file is not valid JSON: ") + e.what());
    }
    if (!doc.is_object()) throw IoError("config file must hold a JSON object");
    std::vector<CLI::ConfigItem> items;
    collect(doc, {}, items);
    return items;
  }

  /// Option values of `app` and of every subcommand that was parsed.
  static json app_json(const CLI::App& app, bool default_also) {
    json out = json::object();
    for (const CLI::Option* op : app.get_options()) {
      if (op->get_lnames().empty() || !op->get_configurable()) continue;
      const auto& name = op->get_lnames().front();
      if (name == "help" || name == "config") continue;
      std::vector<std::string> values = op->results();
      if (values.empty()) {
        if (!default_also || op->get_default_str().empty()) continue;
        values = split_default(op->get_default_str());
      }
      if (op->get_items_expected_max() > 1) {
        json arr = json::array();
        for (const auto& v : values) arr.push_back(scalar(v));
        out[name] = arr;
      } else if (!values.empty()) {
        out[name] = scalar(values.back());
      }
    }
    for (const CLI::App* sub : app.get_subcommands()) out[sub->get_name()] = app_json(*sub, default_also);
    return out;
  }

 private:
  static void collect(const json& node, std::vector<std::string> parents, std::vector<CLI::ConfigItem>& items) {
    for (const auto& [key, value] : node.items()) {
      if (value.is_object()) {
        auto next = parents;
        next.push_back(key);
        collect(value, next, items);
        continue;
      }
      CLI::ConfigItem item;
      item.parents = parents;
      item.name = key;
      if (value.is_array()) {
        for (const auto& v : value) item.inputs.push_back(text(v));
      } else {
        item.inputs.push_back(text(value));
      }
      items.push_back(std::move(item));
    }
  }

  static std::string text(const json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
    if (v.is_number() || v.is_null()) return v.dump();
    throw IoError("config values must be scalars or arrays of scalars");
  }

  static json scalar(const std::string& s) {
    json v = json::parse(s, nullptr, false);
    return v.is_discarded() || v.is_structured() ? json(s) : v;
  }

  static std::vector<std::string> split_default(std::string s) {
    if (s.size() >= 2 && s.front() == '[' && s.back() == ']') s = s.substr(1, s.size() - 2);
    std::vector<std::string> out;
    std::stringstream in(s);
    for (std::string part; std::getline(in, part, ',');) out.push_back(part);
    return out;
  }
};

}  // namespace seminf::cli
