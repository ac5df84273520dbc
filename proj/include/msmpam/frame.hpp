#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

namespace msmpam {

// Column store shared by the PED, model assembly, and prediction inputs.
struct Column {
    enum class Kind { Numeric, Categorical };
    Kind kind = Kind::Numeric;
    std::vector<double> values;        // numeric payload
    std::vector<int> codes;            // categorical payload (level indices)
    std::vector<std::string> levels;   // categorical level names
    int none_level = -1;               // index of the declared reference level "none", -1 when absent

    std::size_t size() const { return kind == Kind::Numeric ? values.size() : codes.size(); }

    static Column numeric(std::vector<double> v) {
        Column c;
        c.kind = Kind::Numeric;
        c.values = std::move(v);
        return c;
    }
    static Column categorical(std::vector<int> codes, std::vector<std::string> levels);
};

class Frame {
public:
    std::size_t n_rows() const { return n_rows_; }
    void set_n_rows(std::size_t n) { n_rows_ = n; }

    bool has(const std::string& name) const { return cols_.count(name) > 0; }
    const Column& col(const std::string& name) const;  // MissingColumn otherwise
    Column& col(const std::string& name);
    const std::vector<double>& num(const std::string& name) const;
    const std::vector<int>& cat(const std::string& name) const;

    void add(const std::string& name, Column column);
    const std::vector<std::string>& names() const { return order_; }

private:
    std::size_t n_rows_ = 0;
    std::vector<std::string> order_;
    std::map<std::string, Column> cols_;
};

}  // namespace msmpam
