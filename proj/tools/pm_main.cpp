#include <cstdio>

int main() {
    std::puts("pm: command-line harness placeholder");
    return 0;
}
