#include <iostream>
#include <vector>
using namespace std;

const long long MOD = 1000000007;

int main() {
    int n;
    cin >> n;
    vector<long long> dp(n + 2);
    dp[1] = 1;
    dp[2] = 2;
    for (int i = 3; i <= n; i++) dp[i] = (dp[i - 1] + dp[i - 2]);
    cout << dp[n] << endl;
    return 0;
}
