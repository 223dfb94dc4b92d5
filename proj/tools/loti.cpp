#include <cstdio>

int main() {
    std::printf("loti: subcommands pending\n");
    return 0;
}
