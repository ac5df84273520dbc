#pragma once

#include <stdexcept>
#include <string>

namespace msmpam {

// All library errors carry a short stable code (e.g. "IllegalTransition")
// plus a human-readable message. The CLI maps categories to exit codes.
class Error : public std::runtime_error {
public:
    enum class Category { Usage, Data, Numeric };

    Error(Category cat, std::string code, const std::string& msg)
        : std::runtime_error(code + ": " + msg), category_(cat), code_(std::move(code)) {}

    Category category() const { return category_; }
    const std::string& code() const { return code_; }

private:
    Category category_;
    std::string code_;
};

[[noreturn]] inline void fail_data(const std::string& code, const std::string& msg) {
    throw Error(Error::Category::Data, code, msg);
}
[[noreturn]] inline void fail_numeric(const std::string& code, const std::string& msg) {
    throw Error(Error::Category::Numeric, code, msg);
}
[[noreturn]] inline void fail_usage(const std::string& code, const std::string& msg) {
    throw Error(Error::Category::Usage, code, msg);
}

}  // namespace msmpam
