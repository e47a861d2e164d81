#include <cstdio>
#include <cstring>

int f[101];

int main() {
    int t;
    scanf("%d", &t);
    while (t--) {
        int n;
        scanf("%d", &n);
        memset(f, 0, sizeof(f));
        for (int i = 0; i < n; i++) {
            int x;
            scanf("%d", &x);
            f[x]++;
        }
        int best = 0;
        for (int v = 1; v <= 100; v++) {
            if (f[v] >= f[best]) best = v;
        }
        printf("%d\n", best);
    }
    return 0;
}
