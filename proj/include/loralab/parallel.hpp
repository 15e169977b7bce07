#pragma once

#include <atomic>
#include <cstdlib>
#include <exception>
#include <string>
#include <thread>
#include <vector>

namespace loralab {

// Worker count from LORA_LAB_THREADS; 0 or unset means one thread per core.
inline unsigned thread_budget() {
    unsigned budget = 0;
    if (const char* env = std::getenv("LORA_LAB_THREADS")) {
        char* end = nullptr;
        const long v = std::strtol(env, &end, 10);
        if (end != env && v > 0) budget = static_cast<unsigned>(v);
    }
    if (budget == 0) budget = std::max(1u, std::thread::hardware_concurrency());
    return budget;
}

// Runs fn(0) .. fn(count-1) on up to thread_budget() threads. Each task must
// write only its own output slot; with that discipline the result is
// independent of scheduling. If tasks throw, the exception of the lowest
// index is rethrown after all workers join.
template <class Fn>
void parallel_for(std::size_t count, Fn&& fn) {
    const unsigned budget = std::min<std::size_t>(thread_budget(), count);
    if (budget <= 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::vector<std::exception_ptr> errors(count);
    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= count) return;
            try {
                fn(i);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    std::vector<std::thread> threads;
    threads.reserve(budget);
    for (unsigned t = 0; t < budget; ++t) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
    for (const auto& e : errors)
        if (e) std::rethrow_exception(e);
}

}  // namespace loralab
