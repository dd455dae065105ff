#include <stdio.h>
#include <string.h>

void printLine(const char *line)
{
    printf("%s\n", line);
}
int main()
{
    char dataBuffer[50];
    char source[50];
    char *data;
    int i;
    for (i = 0; i < 50 - 1; i++)
    {
        dataBuffer[i] = 'A';
    }
    dataBuffer[50-1] = '\0';
    data = dataBuffer + 8;
    memset(source, 'C', 42-1);
    source[42-1] = '\0';
    memcpy(data, source, 42*sizeof(char));
    printLine(data);
    return 0;
}
