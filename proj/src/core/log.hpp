#pragma once

#include <cstdlib>
#include <iostream>
#include <mutex>
#include <sstream>
#include <string>

namespace fraglow::log {

enum class Level : int { Error = 0, Info = 1, Debug = 2 };

// FRAGLOW_LOG={error,info,debug}; default error.
inline Level threshold() {
    static Level lvl = [] {
        const char* env = std::getenv("FRAGLOW_LOG");
        if (!env) return Level::Error;
        std::string s(env);
        if (s == "debug") return Level::Debug;
        if (s == "info") return Level::Info;
        return Level::Error;
    }();
    return lvl;
}

inline void emit(Level lvl, const std::string& msg) {
    if (static_cast<int>(lvl) > static_cast<int>(threshold())) return;
    static std::mutex mu;
    std::lock_guard<std::mutex> lk(mu);
    const char* tag = lvl == Level::Error ? "error" : lvl == Level::Info ? "info" : "debug";
    std::cerr << "[fraglow:" << tag << "] " << msg << "\n";
}

inline void error(const std::string& msg) { emit(Level::Error, msg); }
inline void info(const std::string& msg) { emit(Level::Info, msg); }
inline void debug(const std::string& msg) { emit(Level::Debug, msg); }

}  // namespace fraglow::log
