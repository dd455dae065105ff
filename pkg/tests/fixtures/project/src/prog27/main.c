#include <stdio.h>
#include <string.h>
char *data;
void printLine(const char *line)
{
    printf("%s\n", line);
}
int main()
{
    char dataBuffer[200];
    char source[200];
    int i;
    for (i = 0; i < 200 - 1; i++)
    {
        dataBuffer[i] = 'A';
    }
    dataBuffer[200-1] = '\0';
    data = dataBuffer;
    memset(source, 'C', 200-1);
    source[200-1] = '\0';
    memcpy(data, source, 200*sizeof(char));
    printLine(data);
    return 0;
}
