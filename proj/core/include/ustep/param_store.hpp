#pragma once

#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "ustep/tensor.hpp"

namespace ustep {

/// Ordered map name -> parameter tensor. Iteration follows insertion order,
/// which is what makes optimizer updates and checkpoints reproducible.
class ParamStore {
public:
    using Entry = std::pair<std::string, Tensor>;

    Tensor& add(std::string name, Tensor param);

    bool contains(const std::string& name) const { return index_.count(name) > 0; }
    Tensor& at(const std::string& name);
    const Tensor& at(const std::string& name) const;

    size_t size() const { return items_.size(); }
    bool empty() const { return items_.empty(); }
    int64_t element_count() const;

    std::vector<Entry>::iterator begin() { return items_.begin(); }
    std::vector<Entry>::iterator end() { return items_.end(); }
    std::vector<Entry>::const_iterator begin() const { return items_.begin(); }
    std::vector<Entry>::const_iterator end() const { return items_.end(); }

    void zero_grad();

private:
    std::vector<Entry> items_;
    std::unordered_map<std::string, size_t> index_;
};

inline Tensor& ParamStore::add(std::string name, Tensor param) {
    if (contains(name)) {
        throw ConfigError("param store: duplicate parameter name '" + name + "'");
    }
    if (!param.requires_grad()) {
        throw ConfigError("param store: parameter '" + name + "' must require grad");
    }
    index_.emplace(name, items_.size());
    items_.emplace_back(std::move(name), std::move(param));
    return items_.back().second;
}

inline Tensor& ParamStore::at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) {
        throw ConfigError("param store: unknown parameter '" + name + "'");
    }
    return items_[it->second].second;
}

inline const Tensor& ParamStore::at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) {
        throw ConfigError("param store: unknown parameter '" + name + "'");
    }
    return items_[it->second].second;
}

inline int64_t ParamStore::element_count() const {
    int64_t n = 0;
    for (const auto& [name, t] : items_) {
        n += t.size();
    }
    return n;
}

inline void ParamStore::zero_grad() {
    for (auto& [name, t] : items_) {
        t.zero_grad();
    }
}

} // namespace ustep
