#include <iostream>
using namespace std;

int main() {
    int n;
    cin >> n;
    long long a, b;
    cin >> a >> b;
    cout << a + b << "\n";
    return 0;
}
