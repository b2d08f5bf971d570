// SPDX-License-Identifier: Apache-2.0
// Strict JSON mapping for run configs. Every config type lists its fields once
// in a visit() overload; JsonReader applies a document to it and rejects keys
// it does not know, JsonWriter dumps the fully resolved values.
#pragma once

#include <concepts>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "posemoe/errors.hpp"

namespace posemoe::cli {

using json = nlohmann::ordered_json;

template <typename Ar, typename C>
concept Visitable = requires(Ar& ar, C& c) { visit(ar, c); };

class JsonReader {
public:
    JsonReader(const json& doc, std::string path) : doc_(doc), path_(std::move(path)) {
        if (!doc_.is_object()) throw ConfigError(where() + "expected a JSON object");
    }

    template <typename V>
    void operator()(const char* key, V& value) {
        seen_.insert(key);
        auto it = doc_.find(key);
        if (it != doc_.end()) read(*it, value, child(key));
    }

    void finish() const {
        for (const auto& [key, _] : doc_.items())
            if (!seen_.count(key)) throw ConfigError("unknown config key '" + child(key) + "'");
    }

private:
    std::string child(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
    std::string where() const { return path_.empty() ? std::string() : path_ + ": "; }

    static ConfigError type_error(const std::string& path, const char* expected) {
        return ConfigError("config key '" + path + "' must be " + expected);
    }

    static void read(const json& j, bool& v, const std::string& path) {
        if (!j.is_boolean()) throw type_error(path, "a boolean");
        v = j.get<bool>();
    }
    template <std::unsigned_integral V>
    static void read(const json& j, V& v, const std::string& path) {
        if (!j.is_number_unsigned()) throw type_error(path, "a non-negative integer");
        v = j.get<V>();
    }
    static void read(const json& j, double& v, const std::string& path) {
        if (!j.is_number()) throw type_error(path, "a number");
        v = j.get<double>();
    }
    static void read(const json& j, std::string& v, const std::string& path) {
        if (!j.is_string()) throw type_error(path, "a string");
        v = j.get<std::string>();
    }
    template <typename E>
    static void read(const json& j, std::vector<E>& v, const std::string& path) {
        if (!j.is_array()) throw type_error(path, "an array");
        v.clear();
        for (std::size_t i = 0; i < j.size(); ++i) {
            E e{};
            read(j[i], e, path + "[" + std::to_string(i) + "]");
            v.push_back(std::move(e));
        }
    }
    template <typename C>
        requires Visitable<JsonReader, C>
    static void read(const json& j, C& v, const std::string& path) {
        JsonReader sub(j, path);
        visit(sub, v);
        sub.finish();
    }

    const json& doc_;
    std::string path_;
    std::set<std::string> seen_;
};

class JsonWriter {
public:
    template <typename V>
    void operator()(const char* key, const V& value) {
        doc_[key] = write(value);
    }
    const json& doc() const { return doc_; }

    template <typename C>
    static json dump(const C& cfg) {
        JsonWriter w;
        C copy = cfg;
        visit(w, copy);
        return w.doc_;
    }

private:
    template <typename V>
    static json write(const V& v) {
        if constexpr (Visitable<JsonWriter, V>) {
            return dump(v);
        } else if constexpr (requires { v.begin(); } && !std::same_as<V, std::string>) {
            json arr = json::array();
            for (const auto& e : v) arr.push_back(write(e));
            return arr;
        } else {
            return json(v);
        }
    }

    json doc_ = json::object();
};

/// Applies `doc` onto `cfg`, leaving absent keys at their current values.
template <typename C>
void apply_json(const json& doc, C& cfg, const std::string& path = {}) {
    JsonReader r(doc, path);
    visit(r, cfg);
    r.finish();
}

}  // namespace posemoe::cli
