#pragma once

#include <cstdio>
#include <cstdlib>
#include <functional>
#include <mutex>
#include <string>

namespace subseg::log {

enum class Level { Error = 0, Warn = 1, Info = 2, Debug = 3 };

inline Level parse_level(const std::string& s) {
    if (s == "error") return Level::Error;
    if (s == "warn") return Level::Warn;
    if (s == "info") return Level::Info;
    if (s == "debug") return Level::Debug;
    return Level::Warn;
}

namespace detail {

inline Level& threshold() {
    static Level lvl = [] {
        const char* env = std::getenv("SUBSEG_LOG");
        return env ? parse_level(env) : Level::Warn;
    }();
    return lvl;
}

// Sink is replaceable so tests can capture output. Default writes to stderr.
inline std::function<void(Level, const std::string&)>& sink() {
    static std::function<void(Level, const std::string&)> s;
    return s;
}

inline std::mutex& mutex() {
    static std::mutex m;
    return m;
}

inline const char* tag(Level l) {
    switch (l) {
        case Level::Error: return "error";
        case Level::Warn: return "warn";
        case Level::Info: return "info";
        case Level::Debug: return "debug";
    }
    return "?";
}

}  // namespace detail

inline void set_threshold(Level l) { detail::threshold() = l; }
inline Level threshold() { return detail::threshold(); }
inline void set_sink(std::function<void(Level, const std::string&)> s) {
    std::lock_guard lock(detail::mutex());
    detail::sink() = std::move(s);
}

inline void emit(Level l, const std::string& msg) {
    if (static_cast<int>(l) > static_cast<int>(detail::threshold())) return;
    std::lock_guard lock(detail::mutex());
    if (detail::sink()) {
        detail::sink()(l, msg);
    } else {
        std::fprintf(stderr, "[%s] %s\n", detail::tag(l), msg.c_str());
    }
}

inline void error(const std::string& msg) { emit(Level::Error, msg); }
inline void warn(const std::string& msg) { emit(Level::Warn, msg); }
inline void info(const std::string& msg) { emit(Level::Info, msg); }
inline void debug(const std::string& msg) { emit(Level::Debug, msg); }

}  // namespace subseg::log
